#pragma once

#include <cstddef>

#include "star/event_set.hpp"
#include "star/seeding.hpp"
#include "star/tensor.hpp"

namespace star {

// Standardizes the raw age stored in a batch before the demo projection.
struct AgeScaler {
  double mean = 0.0;
  double std = 1.0;
  double apply(double age) const { return (age - mean) / std; }
};

// Tables and projections producing the initial token states.
struct EmbedderParams {
  Tensor cls;        // [D]
  Tensor demo_w;     // [2 x D]
  Tensor demo_b;     // [D]
  Tensor var_table;  // [F x D]
  Tensor time_w1;    // [1 x D]
  Tensor time_b1;    // [D]
  Tensor val_w1;     // [1 x D]
  Tensor val_b1;     // [D]

  std::size_t dim() const { return cls.size(); }
  std::size_t num_vars() const { return var_table.dim(0); }
};

// Uniform(-1/sqrt(D), 1/sqrt(D)) for every table and projection.
EmbedderParams init_embedder(std::size_t dim, std::size_t num_vars, Rng& rng);

// tanh(demo_w^T [age_std, sex] + demo_b) -> [D].
Tensor embed_demo(double age_std, int sex, const EmbedderParams& params);

// Initial token states H0 [B x S x D]: position 0 is CLS, 1 the demo token,
// then one row per event (var_table[s] + tanh((t/time_unit)*time_w1 + time_b1) +
// tanh(v*val_w1 + val_b1)); padded positions are exact zeros.
Tensor embed_triplets(const Batch& batch, const EmbedderParams& params,
                      const AgeScaler& ages = {}, double time_unit = 1.0);

}  // namespace star
