#include "imvc/optim.hpp"

#include <cmath>

#include "imvc/error.hpp"

namespace imvc {

void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.eps > 0.0) || !(cfg.weight_decay >= 0.0)) {
    throw ConfigError("invalid AdamW hyper-parameters");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConfigError("gradient for unknown parameter " + name);
    if (!g.same_shape(params.get(name).value())) throw ShapeError("gradient shape mismatch for " + name);
    require_finite(g, "gradient of " + name);
  }
  params.increment_step();
  const double t = static_cast<double>(params.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (const auto& [name, p] : params.params()) {
    Var param = p;
    Tensor& theta = param.mutable_value();
    Tensor& m = params.first_moment(name);
    Tensor& v = params.second_moment(name);
    auto it = grads.find(name);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      theta[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void adamw_step(ParamStore& params, const AdamWConfig& cfg) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, p] : params.params()) {
    if (p.has_grad()) grads.emplace(name, p.grad());
  }
  adamw_step(params, grads, cfg);
  params.zero_grad();
}

}  // namespace imvc
