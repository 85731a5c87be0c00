#pragma once

#include <map>
#include <string>

#include "imvc/nn.hpp"

namespace imvc {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// One AdamW update with decoupled weight decay:
///   theta <- theta * (1 - lr * wd), then the bias-corrected Adam step.
/// Gradients are taken from `grads` (keyed by parameter name); parameters
/// without an entry are treated as having a zero gradient.
void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg);

/// Same, using and then clearing the gradients accumulated on the parameters.
void adamw_step(ParamStore& params, const AdamWConfig& cfg);

}  // namespace imvc
