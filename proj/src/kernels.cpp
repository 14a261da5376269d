#include "star/kernels.hpp"

// Eigen's coefficient-wise path for small products peels to the destination's
// alignment and mixes FMA and scalar arithmetic, so its rounding depends on
// where the operands live. The blocked kernel packs operands first and rounds
// the same wherever they are.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace star::kernels {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  View C(c, M, N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
  if (K == 0) {
    if (!accumulate) C.setZero();
    return;
  }
  ConstView A(a, trans_a ? K : M, trans_a ? M : K,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
  ConstView B(b, trans_b ? N : K, trans_b ? K : N,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) {
    run(A.transpose(), B.transpose());
  } else if (trans_a) {
    run(A.transpose(), B);
  } else if (trans_b) {
    run(A, B.transpose());
  } else {
    run(A, B);
  }
}

void masked_softmax_row(const double* logits, const double* mask, double* out, std::size_t n) {
  double max_logit = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (is_masked(mask[j])) continue;
    any = true;
    max_logit = std::max(max_logit, logits[j] + mask[j]);
  }
  if (!any) throw std::domain_error("degenerate attention row");
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (is_masked(mask[j])) {
      out[j] = 0.0;
    } else {
      out[j] = std::exp(logits[j] + mask[j] - max_logit);
      total += out[j];
    }
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

void softmax_row_backward(const double* p, const double* dp, double* dlogits, std::size_t n) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += dp[j] * p[j];
  for (std::size_t j = 0; j < n; ++j) dlogits[j] += p[j] * (dp[j] - dot);
}

}  // namespace star::kernels
