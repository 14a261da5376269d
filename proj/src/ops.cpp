#include "star/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "star/kernels.hpp"

namespace star::ops {

namespace {

// Parent k of an op result, or nullptr when it takes no gradient.
Node* grad_parent(Node& n, std::size_t k) {
  Node* p = n.parents[k].get();
  return (p && p->requires_grad) ? p : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [df](Node& n) {
    Node* p = grad_parent(n, 0);
    if (!p) return;
    auto g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(p->value[i], n.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* p = grad_parent(n, k)) {
        auto g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (Node* p = grad_parent(n, 1)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
    }
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  const std::size_t cols = x.cols();
  if (bias.size() != cols) {
    throw std::invalid_argument("add_rowwise: bias of " + std::to_string(bias.size()) +
                                " values for " + std::to_string(cols) + " columns");
  }
  const std::size_t rows = x.rows();
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [rows, cols](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (Node* p = grad_parent(n, 1)) {
      auto g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += n.grad[r * cols + c];
      }
    }
  });
}

Tensor add_scalar(const Tensor& x, const Tensor& c) {
  if (c.size() != 1) throw std::invalid_argument("add_scalar: expected a one-element tensor");
  const double cv = c.item();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += cv;
  return Tensor::make_result(x.shape(), std::move(out), {x, c}, [](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (Node* p = grad_parent(n, 1)) {
      double total = 0.0;
      for (double v : n.grad) total += v;
      p->grad_buffer()[0] += total;
    }
  });
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2) throw std::invalid_argument("matmul: right operand must be 2-D");
  const std::size_t k = x.cols();
  if (w.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_string(x.shape()) +
                                " * " + shape_string(w.shape()));
  }
  const std::size_t m = x.rows();
  const std::size_t n = w.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, x.data().data(), k, w.data().data(), n, out.data(), n,
                false);
  Shape shape = x.shape();
  if (shape.empty()) shape.push_back(1);
  shape.back() = n;
  return Tensor::make_result(std::move(shape), std::move(out), {x, w}, [m, n, k](Node& node) {
    if (Node* px = grad_parent(node, 0)) {
      // dX = dY * W^T
      kernels::gemm(false, true, m, k, n, node.grad.data(), n, node.parents[1]->value.data(), n,
                    px->grad_buffer().data(), k, true);
    }
    if (Node* pw = grad_parent(node, 1)) {
      // dW = X^T * dY
      kernels::gemm(true, false, k, n, m, node.parents[0]->value.data(), k, node.grad.data(), n,
                    pw->grad_buffer().data(), n, true);
    }
  });
}

Tensor matvec(const Tensor& x, const Tensor& w) {
  const std::size_t k = x.cols();
  if (w.size() != k) throw std::invalid_argument("matvec: length mismatch");
  const std::size_t m = x.rows();
  std::vector<double> out(m, 0.0);
  auto xv = x.data();
  auto wv = w.data();
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += xv[r * k + c] * wv[c];
    out[r] = acc;
  }
  Shape shape = x.shape();
  if (!shape.empty()) shape.pop_back();
  return Tensor::make_result(std::move(shape), std::move(out), {x, w}, [m, k](Node& n) {
    const auto& xval = n.parents[0]->value;
    const auto& wval = n.parents[1]->value;
    if (Node* px = grad_parent(n, 0)) {
      auto g = px->grad_buffer();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < k; ++c) g[r * k + c] += n.grad[r] * wval[c];
      }
    }
    if (Node* pw = grad_parent(n, 1)) {
      auto g = pw->grad_buffer();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < k; ++c) g[c] += n.grad[r] * xval[r * k + c];
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expected a 2-D tensor");
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  std::vector<double> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
      }
    }
  });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
  const std::size_t d = x.cols();
  if (d < 2) throw std::invalid_argument("layer_norm: needs at least 2 features");
  if (gamma.size() != d || beta.size() != d) {
    throw std::invalid_argument("layer_norm: gamma/beta length mismatch");
  }
  const std::size_t rows = x.rows();
  auto in = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> out(rows * d);
  // Saved for backward: normalized input and 1/sigma per row.
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + epsilon);
    (*inv_sigma)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, [rows, d, xhat, inv_sigma](Node& n) {
        const auto& g = n.parents[1]->value;
        const auto& xh = *xhat;
        if (Node* px = grad_parent(n, 0)) {
          auto gx = px->grad_buffer();
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = n.grad[r * d + c] * g[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xh[r * d + c];
            }
            mean_d /= static_cast<double>(d);
            mean_dx /= static_cast<double>(d);
            const double is = (*inv_sigma)[r];
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] += is * (dxhat[c] - mean_d - xh[r * d + c] * mean_dx);
            }
          }
        }
        if (Node* pg = grad_parent(n, 1)) {
          auto gg = pg->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) gg[c] += n.grad[r * d + c] * xh[r * d + c];
          }
        }
        if (Node* pb = grad_parent(n, 2)) {
          auto gb = pb->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) gb[c] += n.grad[r * d + c];
          }
        }
      });
}

Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask) {
  const std::size_t cols = logits.cols();
  const std::size_t rows = logits.rows();
  const bool broadcast = additive_mask.size() == cols && logits.size() != cols;
  if (!broadcast && additive_mask.size() != logits.size()) {
    throw std::invalid_argument("masked_softmax: mask shape " +
                                shape_string(additive_mask.shape()) + " incompatible with " +
                                shape_string(logits.shape()));
  }
  std::vector<double> out(rows * cols);
  auto in = logits.data();
  auto mask = additive_mask.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* m = broadcast ? mask.data() : mask.data() + r * cols;
    kernels::masked_softmax_row(in.data() + r * cols, m, out.data() + r * cols, cols);
  }
  // The mask is a constant: no gradient flows into it.
  return Tensor::make_result(logits.shape(), std::move(out), {logits}, [rows, cols](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        kernels::softmax_row_backward(n.value.data() + r * cols, n.grad.data() + r * cols,
                                      g.data() + r * cols, cols);
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const long> index) {
  const std::size_t cols = table.cols();
  const std::size_t rows = table.rows();
  std::vector<long> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * cols, 0.0);
  auto tv = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " >= " +
                              std::to_string(rows));
    }
    std::copy_n(tv.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  const std::size_t n_rows = idx.size();
  return Tensor::make_result({n_rows, cols}, std::move(out), {table},
                             [idx = std::move(idx), cols](Node& n) {
                               if (Node* p = grad_parent(n, 0)) {
                                 auto g = p->grad_buffer();
                                 for (std::size_t r = 0; r < idx.size(); ++r) {
                                   if (idx[r] < 0) continue;
                                   double* dst = g.data() + idx[r] * cols;
                                   for (std::size_t c = 0; c < cols; ++c) {
                                     dst[c] += n.grad[r * cols + c];
                                   }
                                 }
                               }
                             });
}

Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> index,
                    std::size_t total_rows) {
  const std::size_t cols = src.cols();
  if (index.size() != src.rows()) throw std::invalid_argument("scatter_rows: index length");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(total_rows * cols, 0.0);
  auto sv = src.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= total_rows) throw std::out_of_range("scatter_rows: target row out of range");
    for (std::size_t c = 0; c < cols; ++c) out[idx[r] * cols + c] += sv[r * cols + c];
  }
  return Tensor::make_result({total_rows, cols}, std::move(out), {src},
                             [idx = std::move(idx), cols](Node& n) {
                               if (Node* p = grad_parent(n, 0)) {
                                 auto g = p->grad_buffer();
                                 for (std::size_t r = 0; r < idx.size(); ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) {
                                     g[r * cols + c] += n.grad[idx[r] * cols + c];
                                   }
                                 }
                               }
                             });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.rows();
  if (start + count > cols) throw std::out_of_range("slice_cols: range exceeds columns");
  std::vector<double> out(rows * count);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(in.data() + r * cols + start, count, out.data() + r * count);
  }
  return Tensor::make_result({rows, count}, std::move(out), {x}, [rows, cols, start, count](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) g[r * cols + start + c] += n.grad[r * count + c];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(in.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return Tensor::make_result({rows, total}, std::move(out), parts,
                             [rows, total, widths](Node& n) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (Node* p = grad_parent(n, k)) {
                                   auto g = p->grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     for (std::size_t c = 0; c < widths[k]; ++c) {
                                       g[r * widths[k] + c] += n.grad[r * total + off + c];
                                     }
                                   }
                                 }
                                 off += widths[k];
                               }
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " +
                                shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({}, {total}, {x}, [](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (auto& v : g) v += n.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("bce_with_logits: need one label per logit");
  }
  std::vector<int> y(labels.begin(), labels.end());
  const auto z = logits.data();
  const double count = static_cast<double>(y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("bce_with_logits: labels must be 0/1");
    // max(z,0) - z*y + log(1 + exp(-|z|))
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return Tensor::make_result({}, {total / count}, {logits}, [y = std::move(y), count](Node& n) {
    if (Node* p = grad_parent(n, 0)) {
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double zi = p->value[i];
        const double sig = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        g[i] += n.grad[0] * (sig - y[i]) / count;
      }
    }
  });
}

}  // namespace star::ops
