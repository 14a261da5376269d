#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "star/tensor.hpp"

namespace star {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;  // index into the params list
  std::size_t worst_coord = 0;
  double analytic = 0.0;  // at the worst coordinate
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of a scalar objective with central
// differences, coordinate by coordinate. The error at each coordinate is
// |analytic - numeric| / max(1, |analytic|, |numeric|). The objective is
// re-evaluated with each coordinate perturbed in place, so it must be
// deterministic and read the parameters through the given tensors.
// Throws std::domain_error("objective not finite") and rejects eps outside
// [1e-7, 1e-3].
GradCheckResult gradient_check(const std::function<Tensor()>& objective,
                               std::vector<Tensor> params, double eps = 1e-5);

struct GradCheckOptions {
  double eps = 1e-5;
  // Tensors with more coordinates than this are checked on a random subset
  // of that size, drawn from `seed`. 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

GradCheckResult gradient_check(const std::function<Tensor()>& objective,
                               std::vector<Tensor> params, const GradCheckOptions& options);

}  // namespace star
