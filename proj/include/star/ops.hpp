#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "star/tensor.hpp"

// Differentiable operations. Matrix-shaped ops treat a tensor as
// rows() x cols(): all leading dimensions flatten into rows.
namespace star::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x [rows x C] + bias [C] broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
// x + c with c a one-element tensor.
Tensor add_scalar(const Tensor& x, const Tensor& c);

// x [rows x K] * w [K x M] -> leading dims of x followed by M.
Tensor matmul(const Tensor& x, const Tensor& w);
// x [rows x K] * w [K] -> [rows].
Tensor matvec(const Tensor& x, const Tensor& w);
// 2-D transpose.
Tensor transpose(const Tensor& a);

Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);

inline constexpr double kLayerNormEpsilon = 1e-5;
// Normalizes every row over its last dimension, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double epsilon = kLayerNormEpsilon);

// Row-wise softmax of logits + additive_mask with masked entries exactly 0.
// additive_mask is either the same shape as logits or one row [cols] that is
// broadcast. Throws std::domain_error("degenerate attention row").
Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask);

// Rows of table [N x C] at index; index -1 yields a zero row.
Tensor gather_rows(const Tensor& table, std::span<const long> index);
// Places src row r at output row index[r] of a [total_rows x C] zero matrix.
Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> index,
                    std::size_t total_rows);
// Column block [start, start + count) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
// Horizontal concatenation of equal-row matrices.
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over the batch of numerically stable BCE-with-logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const int> labels);

}  // namespace star::ops
