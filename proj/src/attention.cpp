#include "star/attention.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "star/kernels.hpp"
#include "star/ops.hpp"

namespace star {

std::string_view to_string(BiasKind kind) {
  switch (kind) {
    case BiasKind::nb:
      return "nb";
    case BiasKind::tb:
      return "tb";
    case BiasKind::vb:
      return "vb";
    case BiasKind::vtb:
      return "vtb";
  }
  return "?";
}

double default_omega_init() { return std::log(48.0); }

double BiasParams::tau(std::size_t layer, std::size_t head) const {
  return std::exp(omega.data()[layer * heads() + head]) + epsilon;
}

BiasParams init_bias(std::size_t layers, std::size_t heads, std::size_t num_vars,
                     double omega_init, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("bias epsilon must be positive");
  BiasParams p;
  p.omega = Tensor::full({layers, heads}, omega_init, true);
  p.affinity = Tensor::zeros({layers, heads, num_vars, num_vars}, true);
  p.epsilon = epsilon;
  return p;
}

AttentionParams init_attention(std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto make = [&] {
    std::vector<double> v(dim * dim);
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data({dim, dim}, std::move(v), true);
  };
  AttentionParams p;
  p.wq = make();
  p.wk = make();
  p.wv = make();
  p.wo = make();
  return p;
}

Tensor temporal_bias(std::span<const double> t_tilde, const Tensor& omega, std::size_t index,
                     double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("temporal_bias: epsilon must be positive");
  if (index >= omega.size()) throw std::out_of_range("temporal_bias: omega index");
  const std::size_t S = t_tilde.size();
  const double w = omega.data()[index];
  const double tau = std::exp(w) + epsilon;
  std::vector<double> out(S * S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) out[i * S + j] = -std::abs(t_tilde[i] - t_tilde[j]) / tau;
  }
  std::vector<double> t(t_tilde.begin(), t_tilde.end());
  return Tensor::make_result({S, S}, std::move(out), {omega},
                             [t = std::move(t), index, w, tau](Node& n) {
                               Node* p = n.parents[0].get();
                               if (!p->requires_grad) return;
                               // d/domega of -|dt| / (exp(omega) + eps)
                               const double factor = std::exp(w) / (tau * tau);
                               const std::size_t S = t.size();
                               double acc = 0.0;
                               for (std::size_t i = 0; i < S; ++i) {
                                 for (std::size_t j = 0; j < S; ++j) {
                                   acc += n.grad[i * S + j] * std::abs(t[i] - t[j]);
                                 }
                               }
                               p->grad_buffer()[index] += acc * factor;
                             });
}

Tensor temporal_bias(std::span<const double> t_tilde, double omega_lh, double epsilon) {
  return temporal_bias(t_tilde, Tensor::scalar(omega_lh), 0, epsilon);
}

Tensor variable_type_bias(std::span<const int> s_tilde, const Tensor& affinity,
                          std::size_t block) {
  const std::size_t F = affinity.cols();
  if (affinity.rows() % F != 0 || (block + 1) * F * F > affinity.size()) {
    throw std::out_of_range("variable_type_bias: affinity block out of range");
  }
  const std::size_t S = s_tilde.size();
  const std::size_t base = block * F * F;
  auto a = affinity.data();
  std::vector<int> s(s_tilde.begin(), s_tilde.end());
  for (int id : s) {
    if (id < -1 || id >= static_cast<int>(F)) {
      throw std::out_of_range("variable_type_bias: variable id " + std::to_string(id));
    }
  }
  std::vector<double> out(S * S, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    if (s[i] < 0) continue;
    for (std::size_t j = 0; j < S; ++j) {
      if (s[j] < 0) continue;
      out[i * S + j] = a[base + static_cast<std::size_t>(s[i]) * F + static_cast<std::size_t>(s[j])];
    }
  }
  return Tensor::make_result({S, S}, std::move(out), {affinity},
                             [s = std::move(s), base, F](Node& n) {
                               Node* p = n.parents[0].get();
                               if (!p->requires_grad) return;
                               auto g = p->grad_buffer();
                               const std::size_t S = s.size();
                               for (std::size_t i = 0; i < S; ++i) {
                                 if (s[i] < 0) continue;
                                 for (std::size_t j = 0; j < S; ++j) {
                                   if (s[j] < 0) continue;
                                   g[base + static_cast<std::size_t>(s[i]) * F +
                                     static_cast<std::size_t>(s[j])] += n.grad[i * S + j];
                                 }
                               }
                             });
}

Tensor biased_attention_logits(const Tensor& q, const Tensor& k,
                               const std::optional<Tensor>& bias_time,
                               const std::optional<Tensor>& bias_var, BiasKind kind,
                               const Tensor& pad_mask) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1) || q.dim(0) != k.dim(0)) {
    throw std::invalid_argument("biased_attention_logits: Q and K must both be [S x d_h]");
  }
  const std::size_t S = q.dim(0);
  if (pad_mask.size() != S) throw std::invalid_argument("biased_attention_logits: pad_mask size");
  if ((uses_time_bias(kind) && !bias_time) || (uses_var_bias(kind) && !bias_var)) {
    throw std::invalid_argument("bias tensor missing for schedule");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor logits = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt);
  // The biases sit outside the 1/sqrt(d_h) scaling.
  if (uses_time_bias(kind)) logits = ops::add(logits, *bias_time);
  if (uses_var_bias(kind)) logits = ops::add(logits, *bias_var);
  return ops::add_rowwise(logits, pad_mask);
}

Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v, const Batch& batch,
                       std::size_t heads, BiasKind kind, const BiasParams& bias,
                       std::size_t layer, AttentionProbe* probe) {
  const std::size_t B = batch.batch_size;
  const std::size_t S = batch.seq_len;
  const std::size_t D = q.cols();
  if (q.size() != B * S * D || k.size() != q.size() || v.size() != q.size()) {
    throw std::invalid_argument("attention_heads: q/k/v must be [B*S x D]");
  }
  if (heads == 0 || D % heads != 0) {
    throw std::invalid_argument("attention_heads: D must be divisible by the head count");
  }
  const bool use_time = uses_time_bias(kind);
  const bool use_var = uses_var_bias(kind);
  if (use_time || use_var) {
    if (layer >= bias.layers() || heads != bias.heads()) {
      throw std::invalid_argument("attention_heads: bias parameters do not cover this layer");
    }
  }
  const std::size_t dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t F = use_var ? bias.num_vars() : 0;

  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  auto tt = batch.t_tilde.data();
  auto mask = batch.pad_mask.data();
  const auto& st = batch.s_tilde;
  std::span<const double> omega = use_time ? bias.omega.data() : std::span<const double>{};
  std::span<const double> aff = use_var ? bias.affinity.data() : std::span<const double>{};

  std::vector<double> out(B * S * D, 0.0);
  auto probs = std::make_shared<std::vector<double>>(B * heads * S * S);
  std::vector<double> kt(dh * S);
  std::vector<double> logits(S * S);

  for (std::size_t b = 0; b < B; ++b) {
    const double* t = tt.data() + b * S;
    const int* s = st.data() + b * S;
    const double* m = mask.data() + b * S;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t row0 = b * S * D + h * dh;
      // K_h^T laid out contiguously [dh x S].
      for (std::size_t j = 0; j < S; ++j) {
        for (std::size_t c = 0; c < dh; ++c) kt[c * S + j] = kv[row0 + j * D + c];
      }
      kernels::gemm(false, false, S, S, dh, qv.data() + row0, D, kt.data(), S, logits.data(), S,
                    false);
      const double tau = use_time ? std::exp(omega[layer * heads + h]) + bias.epsilon : 1.0;
      const double* a = use_var ? aff.data() + (layer * heads + h) * F * F : nullptr;
      for (std::size_t i = 0; i < S; ++i) {
        double* row = logits.data() + i * S;
        for (std::size_t j = 0; j < S; ++j) {
          double x = row[j] * inv_sqrt;
          if (use_time) x = x + -std::abs(t[i] - t[j]) / tau;
          if (use_var && s[i] >= 0 && s[j] >= 0) x = x + a[s[i] * F + s[j]];
          row[j] = x + m[j];
        }
      }
      double* p = probs->data() + (b * heads + h) * S * S;
      for (std::size_t i = 0; i < S; ++i) {
        kernels::masked_softmax_row(logits.data() + i * S, m, p + i * S, S);
      }
      if (probe) probe->on_probs(layer, b, h, std::span<const double>(p, S * S), S);
      kernels::gemm(false, false, S, dh, S, p, S, vv.data() + row0, D, out.data() + row0, D,
                    false);
    }
  }

  Tensor omega_in = use_time ? bias.omega : Tensor();
  Tensor aff_in = use_var ? bias.affinity : Tensor();
  std::vector<double> t_copy(tt.begin(), tt.end());
  std::vector<int> s_copy(st.begin(), st.end());
  const double eps = bias.epsilon;
  return Tensor::make_result(
      {B * S, D}, std::move(out), {q, k, v, omega_in, aff_in},
      [B, S, D, dh, F, heads, layer, inv_sqrt, eps, use_time, use_var, probs,
       t = std::move(t_copy), s = std::move(s_copy)](Node& n) {
        Node* pq = n.parents[0].get();
        Node* pk = n.parents[1].get();
        Node* pv = n.parents[2].get();
        Node* pw = use_time ? n.parents[3].get() : nullptr;
        Node* pa = use_var ? n.parents[4].get() : nullptr;
        if (pw && !pw->requires_grad) pw = nullptr;
        if (pa && !pa->requires_grad) pa = nullptr;
        const auto& qd = pq->value;
        const auto& kd = pk->value;
        const auto& vd = pv->value;
        double* gq = pq->requires_grad ? pq->grad_buffer().data() : nullptr;
        double* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
        double* gv = pv->requires_grad ? pv->grad_buffer().data() : nullptr;
        double* gw = pw ? pw->grad_buffer().data() : nullptr;
        double* ga = pa ? pa->grad_buffer().data() : nullptr;
        const double* wv = use_time ? n.parents[3]->value.data() : nullptr;

        std::vector<double> dp(S * S);
        std::vector<double> dlogits(S * S);
        for (std::size_t b = 0; b < B; ++b) {
          const double* tb = t.data() + b * S;
          const int* sb = s.data() + b * S;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t row0 = b * S * D + h * dh;
            const double* p = probs->data() + (b * heads + h) * S * S;
            const double* dout = n.grad.data() + row0;
            // dP = dO V^T, dV += P^T dO
            kernels::gemm(false, true, S, S, dh, dout, D, vd.data() + row0, D, dp.data(), S, false);
            if (gv) kernels::gemm(true, false, S, dh, S, p, S, dout, D, gv + row0, D, true);
            std::fill(dlogits.begin(), dlogits.end(), 0.0);
            for (std::size_t i = 0; i < S; ++i) {
              kernels::softmax_row_backward(p + i * S, dp.data() + i * S, dlogits.data() + i * S, S);
            }
            if (gw) {
              const double w = wv[layer * heads + h];
              const double tau = std::exp(w) + eps;
              double acc = 0.0;
              for (std::size_t i = 0; i < S; ++i) {
                for (std::size_t j = 0; j < S; ++j) {
                  acc += dlogits[i * S + j] * std::abs(tb[i] - tb[j]);
                }
              }
              gw[layer * heads + h] += acc * std::exp(w) / (tau * tau);
            }
            if (ga) {
              double* g = ga + (layer * heads + h) * F * F;
              for (std::size_t i = 0; i < S; ++i) {
                if (sb[i] < 0) continue;
                for (std::size_t j = 0; j < S; ++j) {
                  if (sb[j] < 0) continue;
                  g[sb[i] * F + sb[j]] += dlogits[i * S + j];
                }
              }
            }
            for (auto& x : dlogits) x *= inv_sqrt;
            // dQ += dS K, dK += dS^T Q
            if (gq) {
              kernels::gemm(false, false, S, dh, S, dlogits.data(), S, kd.data() + row0, D,
                            gq + row0, D, true);
            }
            if (gk) {
              kernels::gemm(true, false, S, dh, S, dlogits.data(), S, qd.data() + row0, D,
                            gk + row0, D, true);
            }
          }
        }
      });
}

Tensor multi_head_attention(const Tensor& h_in, std::size_t layer, BiasKind kind,
                            const AttentionParams& params, const BiasParams& bias,
                            const Batch& batch, AttentionProbe* probe) {
  auto q = ops::matmul(h_in, params.wq);
  auto k = ops::matmul(h_in, params.wk);
  auto v = ops::matmul(h_in, params.wv);
  auto heads = attention_heads(q, k, v, batch, bias.heads(), kind, bias, layer, probe);
  auto out = ops::matmul(heads, params.wo);
  return ops::reshape(out, h_in.shape());
}

}  // namespace star
