#include "star/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "star/ops.hpp"

namespace star {

namespace {

BiasKind parse_kind(std::string_view token) {
  if (token == "nb") return BiasKind::nb;
  if (token == "tb") return BiasKind::tb;
  if (token == "vb") return BiasKind::vb;
  if (token == "vt" || token == "vtb") return BiasKind::vtb;
  throw std::invalid_argument("unknown bias kind '" + std::string(token) +
                              "' (valid kinds: nb, tb, vb, vt)");
}

std::string_view short_name(BiasKind kind) {
  return kind == BiasKind::vtb ? std::string_view("vt") : to_string(kind);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

BiasSchedule parse_schedule(std::string_view spec, std::size_t layers) {
  if (layers == 0) throw std::invalid_argument("schedule needs at least one layer");
  spec = trim(spec);
  BiasSchedule schedule;
  if (spec.find(',') != std::string_view::npos) {
    for (auto token : split(spec, ',')) schedule.kinds.push_back(parse_kind(trim(token)));
    if (schedule.kinds.size() != layers) {
      throw std::invalid_argument("schedule lists " + std::to_string(schedule.kinds.size()) +
                                  " layers, encoder has " + std::to_string(layers));
    }
    return schedule;
  }
  auto halves = split(spec, '-');
  if (halves.size() == 1) {
    schedule.kinds.assign(layers, parse_kind(halves[0]));
    if (layers != 1) {
      throw std::invalid_argument("schedule '" + std::string(spec) +
                                  "' must be 'a-b' or a comma list of " +
                                  std::to_string(layers) + " kinds");
    }
    return schedule;
  }
  if (halves.size() != 2) {
    throw std::invalid_argument("schedule '" + std::string(spec) + "' must have the form a-b");
  }
  if (layers % 2 != 0) {
    throw std::invalid_argument("two-stage schedules need an even layer count");
  }
  const BiasKind lower = parse_kind(halves[0]);
  const BiasKind upper = parse_kind(halves[1]);
  schedule.kinds.assign(layers / 2, lower);
  schedule.kinds.insert(schedule.kinds.end(), layers / 2, upper);
  return schedule;
}

std::string format_schedule(const BiasSchedule& schedule) {
  const auto& k = schedule.kinds;
  const std::size_t n = k.size();
  if (n >= 2 && n % 2 == 0) {
    bool two_stage = true;
    for (std::size_t i = 1; i < n; ++i) {
      if (k[i] != (i < n / 2 ? k[0] : k[n / 2])) two_stage = false;
    }
    if (two_stage) {
      return std::string(short_name(k[0])) + "-" + std::string(short_name(k[n / 2]));
    }
  }
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ',';
    out += short_name(k[i]);
  }
  return out;
}

EncoderParams init_encoder(std::size_t dim, std::size_t layers, std::size_t ff_dim, Rng& rng) {
  EncoderParams p;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(dim));
  const double ff_bound = 1.0 / std::sqrt(static_cast<double>(ff_dim));
  for (std::size_t l = 0; l < layers; ++l) {
    EncoderLayerParams layer;
    layer.attn = init_attention(dim, rng);
    layer.ln1_gamma = Tensor::full({dim}, 1.0, true);
    layer.ln1_beta = Tensor::zeros({dim}, true);
    layer.ln2_gamma = Tensor::full({dim}, 1.0, true);
    layer.ln2_beta = Tensor::zeros({dim}, true);
    layer.ff_w1 = uniform({dim, ff_dim}, in_bound, rng);
    layer.ff_b1 = uniform({ff_dim}, in_bound, rng);
    layer.ff_w2 = uniform({ff_dim, dim}, ff_bound, rng);
    layer.ff_b2 = uniform({dim}, ff_bound, rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_gamma = Tensor::full({dim}, 1.0, true);
  p.final_beta = Tensor::zeros({dim}, true);
  p.head.w = uniform({dim}, in_bound, rng);
  p.head.c = Tensor::zeros({1}, true);
  return p;
}

Tensor encoder_forward(const Tensor& h0, const BiasSchedule& schedule,
                       const EncoderParams& params, const BiasParams& bias, const Batch& batch,
                       AttentionProbe* probe) {
  if (schedule.size() != params.layers.size()) {
    throw std::invalid_argument("schedule has " + std::to_string(schedule.size()) +
                                " layers, encoder has " + std::to_string(params.layers.size()));
  }
  if (h0.rank() != 3 || h0.dim(0) != batch.batch_size || h0.dim(1) != batch.seq_len) {
    throw std::invalid_argument("encoder_forward: H0 shape " + shape_string(h0.shape()) +
                                " does not match the batch");
  }
  Tensor x = h0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    auto attn = multi_head_attention(ops::layer_norm(x, p.ln1_gamma, p.ln1_beta), l, schedule[l],
                                     p.attn, bias, batch, probe);
    x = ops::add(x, attn);
    auto hidden = ops::gelu(
        ops::add_rowwise(ops::matmul(ops::layer_norm(x, p.ln2_gamma, p.ln2_beta), p.ff_w1),
                         p.ff_b1));
    x = ops::add(x, ops::add_rowwise(ops::matmul(hidden, p.ff_w2), p.ff_b2));
  }
  return ops::layer_norm(x, params.final_gamma, params.final_beta);
}

Tensor predict(const Tensor& h_final, const PredictionHead& head) {
  if (h_final.rank() != 3) throw std::invalid_argument("predict: expected [B x S x D]");
  const std::size_t B = h_final.dim(0);
  const std::size_t S = h_final.dim(1);
  std::vector<long> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = static_cast<long>(b * S);
  auto z = ops::gather_rows(h_final, cls_rows);
  return ops::add_scalar(ops::matvec(z, head.w), head.c);
}

Tensor bce_loss(const Tensor& logits, std::span<const int> labels) {
  return ops::bce_with_logits(logits, labels);
}

}  // namespace star
