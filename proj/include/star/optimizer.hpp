#pragma once

#include <cstddef>
#include <vector>

#include "star/tensor.hpp"

namespace star {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam without weight decay. A parameter whose gradient
// buffer was never populated is treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  void zero_grad();
  void step();
  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::size_t step_ = 0;
};

}  // namespace star
