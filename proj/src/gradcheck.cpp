#include "star/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace star {

namespace {
double evaluate(const std::function<Tensor()>& objective) {
  NoGradGuard guard;
  const double v = objective().item();
  if (!std::isfinite(v)) throw std::domain_error("objective not finite");
  return v;
}
}  // namespace

GradCheckResult gradient_check(const std::function<Tensor()>& objective,
                               std::vector<Tensor> params, double eps) {
  return gradient_check(objective, std::move(params), GradCheckOptions{.eps = eps});
}

GradCheckResult gradient_check(const std::function<Tensor()>& objective,
                               std::vector<Tensor> params, const GradCheckOptions& options) {
  const double eps = options.eps;
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("gradient_check: eps must lie in [1e-7, 1e-3]");
  }
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = objective();
  if (!std::isfinite(loss.item())) throw std::domain_error("objective not finite");
  loss.backward();

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    const std::size_t cap = options.max_coords_per_param;
    if (cap != 0 && coords.size() > cap) {
      std::mt19937_64 rng(options.seed + pi);
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(cap);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(objective);
      values[i] = saved - eps;
      const double down = evaluate(objective);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = err;
        result.worst_param = pi;
        result.worst_coord = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace star
