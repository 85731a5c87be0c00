#include "imvc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "imvc/error.hpp"

namespace imvc {

double gradient_check(const std::function<Var()>& loss_fn, ParamStore& params, double h) {
  params.zero_grad();
  Var loss = loss_fn();
  const double base = loss.item();
  loss.backward();
  if (loss_fn().item() != base) throw NumericError("gradient_check: loss function is not deterministic");

  double worst = 0.0;
  for (const auto& [name, p] : params.params()) {
    Var param = p;
    const Tensor analytic = param.grad();
    Tensor& theta = param.mutable_value();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = loss_fn().item();
      theta[i] = saved - h;
      const double down = loss_fn().item();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  params.zero_grad();
  return worst;
}

}  // namespace imvc
