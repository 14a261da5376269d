#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "star/event_set.hpp"
#include "star/seeding.hpp"
#include "star/tensor.hpp"

namespace star {

// Which additive attention biases a layer applies.
enum class BiasKind { nb, tb, vb, vtb };

std::string_view to_string(BiasKind kind);
inline bool uses_time_bias(BiasKind k) { return k == BiasKind::tb || k == BiasKind::vtb; }
inline bool uses_var_bias(BiasKind k) { return k == BiasKind::vb || k == BiasKind::vtb; }

inline constexpr double kDefaultBiasEpsilon = 1e-6;
// ln(48): a 48 h timescale keeps initial time biases within about [-1, 0].
double default_omega_init();

// Per-layer, per-head bias parameters. Allocated for every layer whatever
// the schedule, so initialization does not depend on it.
struct BiasParams {
  Tensor omega;     // [layers x heads], tau = exp(omega) + epsilon
  Tensor affinity;  // [layers x heads x F x F], not constrained symmetric
  double epsilon = kDefaultBiasEpsilon;

  std::size_t layers() const { return omega.dim(0); }
  std::size_t heads() const { return omega.dim(1); }
  std::size_t num_vars() const { return affinity.dim(2); }
  double tau(std::size_t layer, std::size_t head) const;
};

// omega = omega_init everywhere, affinity = 0.
BiasParams init_bias(std::size_t layers, std::size_t heads, std::size_t num_vars,
                     double omega_init = default_omega_init(),
                     double epsilon = kDefaultBiasEpsilon);

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [D x D]; head h owns columns [h*d_h, (h+1)*d_h)
};

// Uniform(-1/sqrt(D), 1/sqrt(D)).
AttentionParams init_attention(std::size_t dim, Rng& rng);

// --- per-episode bias matrices ----------------------------------------------

// [S x S] with entry -|t_i - t_j| / (exp(omega[index]) + epsilon). Gradient
// flows into omega[index].
Tensor temporal_bias(std::span<const double> t_tilde, const Tensor& omega, std::size_t index,
                     double epsilon);
Tensor temporal_bias(std::span<const double> t_tilde, double omega_lh, double epsilon);

// [S x S] with entry affinity[s_i, s_j] when both IDs are in [0, F), else 0.
// `block` selects the (layer, head) F x F slice: block = layer * H + head.
Tensor variable_type_bias(std::span<const int> s_tilde, const Tensor& affinity,
                          std::size_t block = 0);

// Q K^T / sqrt(d_h) plus the biases the kind enables plus pad_mask[j].
// Throws "bias tensor missing for schedule" if an enabled bias is absent.
Tensor biased_attention_logits(const Tensor& q, const Tensor& k,
                               const std::optional<Tensor>& bias_time,
                               const std::optional<Tensor>& bias_var, BiasKind kind,
                               const Tensor& pad_mask);

// --- batched attention --------------------------------------------------------

// Receives every attention probability matrix [S x S] as it is computed.
class AttentionProbe {
 public:
  virtual ~AttentionProbe() = default;
  virtual void on_probs(std::size_t layer, std::size_t episode, std::size_t head,
                        std::span<const double> probs, std::size_t seq_len) = 0;
};

// Fused per-head biased attention over projected q, k, v [B*S x D]; returns
// the concatenated head outputs [B*S x D] before the output projection.
// Biases are rebuilt from the batch metadata with `layer`'s parameters; an nb
// layer never reads the bias parameters.
Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, const Batch& batch,
                       std::size_t heads, BiasKind kind, const BiasParams& bias,
                       std::size_t layer, AttentionProbe* probe = nullptr);

// Projections, biased attention and output projection for one layer:
// h_in [B x S x D] -> [B x S x D].
Tensor multi_head_attention(const Tensor& h_in, std::size_t layer, BiasKind kind,
                            const AttentionParams& params, const BiasParams& bias,
                            const Batch& batch, AttentionProbe* probe = nullptr);

}  // namespace star
