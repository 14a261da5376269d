#pragma once

#include <cstddef>

// Raw row-major kernels shared by the graph ops and the fused attention op.
// Every caller that must agree bit-for-bit goes through these functions.
namespace star::kernels {

// Additive sentinel for masked keys. Anything at or below half of it counts
// as masked; masked outputs are written as exact zeros.
inline constexpr double kMaskedLogit = -1e9;

inline bool is_masked(double mask_value) { return mask_value <= 0.5 * kMaskedLogit; }

// C (+)= op(A) * op(B) with op(X) = X or X^T. Shapes are those of op(A)
// [m x k] and op(B) [k x n]; ld* are row strides of the stored matrices.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate);

// out = softmax(logits + mask) over one row, with masked entries forced to 0.
// Throws std::domain_error("degenerate attention row") if every entry is masked.
void masked_softmax_row(const double* logits, const double* mask, double* out, std::size_t n);

// Softmax backward for one row: dlogits = p * (dp - <dp, p>), accumulated.
void softmax_row_backward(const double* p, const double* dp, double* dlogits, std::size_t n);

}  // namespace star::kernels
