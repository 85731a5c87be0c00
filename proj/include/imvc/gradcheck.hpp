#pragma once

#include <functional>

#include "imvc/nn.hpp"

namespace imvc {

/// Compares autodiff gradients of `loss_fn` against central differences over
/// every parameter entry in `params`. Returns
///   max |analytic - numeric| / max(1, |analytic|).
/// Throws NumericError if two evaluations at the same point disagree.
double gradient_check(const std::function<Var()>& loss_fn, ParamStore& params, double h = 1e-5);

}  // namespace imvc
