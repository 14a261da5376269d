#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "star/attention.hpp"
#include "star/event_set.hpp"
#include "star/seeding.hpp"
#include "star/tensor.hpp"

namespace star {

inline constexpr std::size_t kDefaultEncoderLayers = 4;

// One bias kind per encoder layer, lowest layer first.
struct BiasSchedule {
  std::vector<BiasKind> kinds;

  std::size_t size() const { return kinds.size(); }
  BiasKind operator[](std::size_t layer) const { return kinds.at(layer); }
  bool operator==(const BiasSchedule&) const = default;
};

// The ten two-stage schedules of the depth ablation, in reporting order.
inline constexpr std::array<std::string_view, 10> kAblationSchedules = {
    "nb-nb", "tb-tb", "vb-vb", "nb-tb", "tb-nb", "nb-vb", "vb-nb", "vb-tb", "tb-vb", "vt-vt"};

// Accepts "a-b" (a on the lower half of the layers, b on the upper half) or
// an explicit comma list with one kind per layer. Tokens: nb, tb, vb, vt
// (alias vtb). Throws std::invalid_argument on unknown tokens or a list of
// the wrong length.
BiasSchedule parse_schedule(std::string_view spec, std::size_t layers = kDefaultEncoderLayers);

// Canonical text: "a-b" when each half is uniform (vtb spelled "vt"),
// otherwise the comma list.
std::string format_schedule(const BiasSchedule& schedule);

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor ln1_gamma, ln1_beta;  // before attention
  Tensor ln2_gamma, ln2_beta;  // before the feed-forward block
  Tensor ff_w1;                // [D x D_ff]
  Tensor ff_b1;                // [D_ff]
  Tensor ff_w2;                // [D_ff x D]
  Tensor ff_b2;                // [D]
};

struct PredictionHead {
  Tensor w;  // [D]
  Tensor c;  // [1]
};

struct EncoderParams {
  std::vector<EncoderLayerParams> layers;
  Tensor final_gamma, final_beta;
  PredictionHead head;
};

EncoderParams init_encoder(std::size_t dim, std::size_t layers, std::size_t ff_dim, Rng& rng);

// Pre-norm stack: per layer x += MHA(LN(x)); x += FFN(LN(x)) with GELU;
// then a final layer norm. h0 and the result are [B x S x D].
Tensor encoder_forward(const Tensor& h0, const BiasSchedule& schedule,
                       const EncoderParams& params, const BiasParams& bias, const Batch& batch,
                       AttentionProbe* probe = nullptr);

// logits[b] = w . h_final[b, 0, :] + c.
Tensor predict(const Tensor& h_final, const PredictionHead& head);

// Mean BCE-with-logits over the batch (differentiable scalar).
Tensor bce_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace star
