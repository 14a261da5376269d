#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include <gtest/gtest.h>

#include "star/gradcheck.hpp"
#include "star/kernels.hpp"
#include "star/ops.hpp"
#include "star/seeding.hpp"

using namespace star;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Tensor project(const Tensor& y, const Tensor& weights) {
  return ops::sum(ops::mul(ops::reshape(y, weights.shape()), weights));
}

// Standard normal CDF by composite Simpson integration of the density.
double phi_oracle(double x) {
  const double lo = -12.0;
  const int n = 200000;
  const double h = (x - lo) / n;
  auto pdf = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); };
  double acc = pdf(lo) + pdf(x);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
  return acc * h / 3.0;
}

}  // namespace

TEST(MaskedSoftmax, UniformLogitsGiveUniformRow) {
  auto p = ops::masked_softmax(Tensor::from_data({1, 2}, {0, 0}), Tensor::zeros({1, 2}));
  EXPECT_DOUBLE_EQ(p.at(0), 0.5);
  EXPECT_DOUBLE_EQ(p.at(1), 0.5);
}

TEST(MaskedSoftmax, MaskedEntryIsExactlyZero) {
  auto p = ops::masked_softmax(Tensor::from_data({1, 2}, {5, 2}),
                               Tensor::from_data({1, 2}, {0, kernels::kMaskedLogit}));
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), 0.0);
}

TEST(MaskedSoftmax, ThreeLogits) {
  auto p = ops::masked_softmax(Tensor::from_data({1, 3}, {1, 2, 3}), Tensor::zeros({1, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double expected[] = {0.09003, 0.24473, 0.66524};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(p.at(i), std::exp(i + 1.0) / z, 1e-15);
    EXPECT_NEAR(p.at(i), expected[i], 5e-6);
  }
}

TEST(MaskedSoftmax, FullyMaskedRowThrows) {
  const double m = kernels::kMaskedLogit;
  try {
    ops::masked_softmax(Tensor::from_data({2, 2}, {1, 2, 3, 4}),
                        Tensor::from_data({2, 2}, {0, m, m, m}));
    FAIL() << "expected a throw";
  } catch (const std::domain_error& ex) {
    EXPECT_STREQ(ex.what(), "degenerate attention row");
  }
}

TEST(MaskedSoftmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(7);
  std::bernoulli_distribution masked(0.3);
  std::normal_distribution<double> shift(0.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + trial % 5;
    const std::size_t cols = 1 + trial % 13;
    auto logits = random_tensor(rng, {rows, cols}, false, -20, 20);
    std::vector<double> mask(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        // Column 0 always valid so no row is degenerate.
        mask[r * cols + c] = (c > 0 && masked(rng)) ? kernels::kMaskedLogit : 0.0;
      }
    }
    auto m = Tensor::from_data({rows, cols}, mask);
    auto p = ops::masked_softmax(logits, m);
    std::vector<double> shifted(logits.data().begin(), logits.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
      const double c0 = shift(rng);
      for (std::size_t c = 0; c < cols; ++c) shifted[r * cols + c] += c0;
    }
    auto q = ops::masked_softmax(Tensor::from_data({rows, cols}, shifted), m);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = p.at(r * cols + c);
        EXPECT_GE(v, 0.0);
        if (kernels::is_masked(mask[r * cols + c])) EXPECT_EQ(v, 0.0);
        EXPECT_NEAR(v, q.at(r * cols + c), 1e-12);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Gelu, Examples) {
  auto y = ops::gelu(Tensor::from_data({3}, {0.0, 10.0, 1.0}));
  EXPECT_EQ(y.at(0), 0.0);
  EXPECT_NEAR(y.at(1), 10.0, 1e-9);
  EXPECT_NEAR(y.at(2), 1.0 * phi_oracle(1.0), 1e-10);
  EXPECT_NEAR(y.at(2), 0.8413447, 5e-8);
}

TEST(Gelu, MatchesIntegratedNormalCdf) {
  for (double x : {-3.0, -1.5, -0.2, 0.3, 2.2, 4.0}) {
    auto y = ops::gelu(Tensor::from_data({1}, {x}));
    EXPECT_NEAR(y.at(0), x * phi_oracle(x), 1e-10) << "x=" << x;
  }
}

TEST(LayerNorm, Examples) {
  auto ones = Tensor::full({2}, 1.0);
  auto zeros = Tensor::zeros({2});
  auto constant = ops::layer_norm(Tensor::from_data({1, 2}, {4, 4}), ones, zeros);
  EXPECT_EQ(constant.at(0), 0.0);
  EXPECT_EQ(constant.at(1), 0.0);

  auto pm = ops::layer_norm(Tensor::from_data({1, 2}, {1, -1}), ones, zeros);
  // Population variance 1, so the output is 1/sqrt(1 + 1e-5).
  EXPECT_NEAR(pm.at(0), 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(pm.at(1), -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(pm.at(0), 1.0, 1e-5);

  auto killed = ops::layer_norm(Tensor::from_data({1, 2}, {3, 5}), zeros, Tensor::full({2}, 7.0));
  EXPECT_EQ(killed.at(0), 7.0);
  EXPECT_EQ(killed.at(1), 7.0);
}

TEST(LayerNorm, NormalizedRowsHaveZeroMeanUnitVariance) {
  Rng rng(11);
  const std::size_t D = 16;
  auto x = random_tensor(rng, {20, D}, false, -30, 30);
  auto y = ops::layer_norm(x, Tensor::full({D}, 1.0), Tensor::zeros({D}));
  for (std::size_t r = 0; r < 20; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < D; ++c) mean += y.at(r * D + c);
    mean /= D;
    double var = 0.0;
    for (std::size_t c = 0; c < D; ++c) var += (y.at(r * D + c) - mean) * (y.at(r * D + c) - mean);
    var /= D;
    EXPECT_NEAR(mean, 0.0, 1e-10);
    // Inputs of this scale make the epsilon correction negligible.
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(GradientCheck, Quadratic) {
  auto w = Tensor::from_data({1}, {3.0}, true);
  auto res = gradient_check([&] { return ops::sum(ops::mul(w, w)); }, {w}, 1e-5);
  EXPECT_LT(res.max_relative_error, 1e-8);
  EXPECT_NEAR(res.analytic, 6.0, 1e-12);
  EXPECT_EQ(res.coordinates, 1u);
}

TEST(GradientCheck, RejectsBadEpsilonAndNonFiniteObjective) {
  auto w = Tensor::from_data({1}, {3.0}, true);
  auto f = [&] { return ops::sum(w); };
  EXPECT_THROW(gradient_check(f, {w}, 1e-2), std::invalid_argument);
  EXPECT_THROW(gradient_check(f, {w}, 1e-9), std::invalid_argument);
  auto big = Tensor::from_data({1}, {1000.0}, true);
  try {
    gradient_check([&] { return ops::sum(ops::exp(big)); }, {big});
    FAIL() << "expected a throw";
  } catch (const std::domain_error& ex) {
    EXPECT_STREQ(ex.what(), "objective not finite");
  }
}

TEST(GradientCheck, SamplesLargeTensors) {
  auto w = Tensor::from_data({40}, std::vector<double>(40, 0.5), true);
  auto v = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
  auto f = [&] { return ops::sum(ops::add_scalar(ops::mul(w, w), ops::sum(ops::mul(v, v)))); };
  GradCheckOptions options{.eps = 1e-5, .max_coords_per_param = 8, .seed = 3};
  auto res = gradient_check(f, {w, v}, options);
  EXPECT_EQ(res.coordinates, 8u + 3u);
  EXPECT_LT(res.max_relative_error, 1e-8);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  auto w = Tensor::from_data({2}, {0.5, -1.0}, true);
  // Backward rule deliberately off by a factor of two.
  auto bad = [&] {
    std::vector<double> out(w.data().begin(), w.data().end());
    for (auto& v : out) v = v * v;
    return ops::sum(Tensor::make_result({2}, out, {w}, [](Node& n) {
      auto g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 4.0 * n.parents[0]->value[i] * n.grad[i];
    }));
  };
  EXPECT_GT(gradient_check(bad, {w}).max_relative_error, 0.1);
}

// Every op's backward rule against central differences.
TEST(OpGradients, AllOpsPassFiniteDifferences) {
  Rng rng(2024);
  auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                   std::vector<Tensor> params) {
    auto res = gradient_check(f, std::move(params), 1e-5);
    EXPECT_LT(res.max_relative_error, 1e-6) << name;
  };
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  auto r34 = random_tensor(rng, {3, 4}, false);
  check("add", [&] { return project(ops::add(a, b), r34); }, {a, b});
  check("sub", [&] { return project(ops::sub(a, b), r34); }, {a, b});
  check("mul", [&] { return project(ops::mul(a, b), r34); }, {a, b});
  check("scale", [&] { return project(ops::scale(a, -1.7), r34); }, {a});
  auto bias = random_tensor(rng, {4});
  check("add_rowwise", [&] { return project(ops::add_rowwise(a, bias), r34); }, {a, bias});
  auto c = random_tensor(rng, {1});
  check("add_scalar", [&] { return project(ops::add_scalar(a, c), r34); }, {a, c});
  auto w = random_tensor(rng, {4, 5});
  auto r35 = random_tensor(rng, {3, 5}, false);
  check("matmul", [&] { return project(ops::matmul(a, w), r35); }, {a, w});
  auto v = random_tensor(rng, {4});
  auto r3 = random_tensor(rng, {3}, false);
  check("matvec", [&] { return project(ops::matvec(a, v), r3); }, {a, v});
  auto r43 = random_tensor(rng, {4, 3}, false);
  check("transpose", [&] { return project(ops::transpose(a), r43); }, {a});
  check("tanh", [&] { return project(ops::tanh(a), r34); }, {a});
  check("exp", [&] { return project(ops::exp(a), r34); }, {a});
  auto wide = random_tensor(rng, {3, 4}, true, -3, 3);
  check("gelu", [&] { return project(ops::gelu(wide), r34); }, {wide});
  auto gamma = random_tensor(rng, {4});
  auto beta = random_tensor(rng, {4});
  check("layer_norm", [&] { return project(ops::layer_norm(a, gamma, beta), r34); },
        {a, gamma, beta});
  auto mask = Tensor::from_data({4}, {0, kernels::kMaskedLogit, 0, 0});
  check("masked_softmax", [&] { return project(ops::masked_softmax(wide, mask), r34); }, {wide});
  std::vector<long> gidx = {2, -1, 0, 2};
  auto r44 = random_tensor(rng, {4, 4}, false);
  check("gather_rows", [&] { return project(ops::gather_rows(a, gidx), r44); }, {a});
  std::vector<std::size_t> sidx = {4, 0, 2};
  auto r54 = random_tensor(rng, {5, 4}, false);
  check("scatter_rows", [&] { return project(ops::scatter_rows(a, sidx, 5), r54); }, {a});
  auto r32 = random_tensor(rng, {3, 2}, false);
  check("slice_cols", [&] { return project(ops::slice_cols(a, 1, 2), r32); }, {a});
  auto d = random_tensor(rng, {3, 2});
  auto r36 = random_tensor(rng, {3, 6}, false);
  check("concat_cols", [&] { return project(ops::concat_cols({a, d}), r36); }, {a, d});
  auto r26 = random_tensor(rng, {2, 6}, false);
  check("reshape", [&] { return project(ops::reshape(a, {2, 6}), r26); }, {a});
  check("mean", [&] { return ops::mean(ops::mul(a, b)); }, {a, b});
  auto z = random_tensor(rng, {4}, true, -4, 4);
  std::vector<int> y = {1, 0, 0, 1};
  check("bce_with_logits", [&] { return ops::bce_with_logits(z, y); }, {z});
}

TEST(Graph, SharedSubexpressionVisitedOnce) {
  auto x = Tensor::from_data({1}, {1.5}, true);
  auto sq = ops::mul(x, x);
  auto y = ops::sum(ops::add(sq, sq));  // 2x^2
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  auto order = topological_order(*y.node());
  std::set<Node*> unique(order.begin(), order.end());
  EXPECT_EQ(unique.size(), order.size());
  EXPECT_EQ(order.back(), y.node().get());
}

TEST(Graph, EveryReachableLeafGetsAGradientBuffer) {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto unused_path = Tensor::from_data({2}, {3.0, 4.0}, true);
  // Multiplying by zero still routes a (zero) gradient to the leaf.
  auto y = ops::sum(ops::add(x, ops::scale(unused_path, 0.0)));
  y.backward();
  ASSERT_TRUE(unused_path.has_grad());
  EXPECT_EQ(unused_path.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Graph, NoGradGuardSkipsRecording) {
  auto x = Tensor::from_data({1}, {2.0}, true);
  {
    NoGradGuard guard;
    auto y = ops::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(ops::mul(x, x).requires_grad());
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  auto t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

// Results must not depend on where the operands sit in memory; the fused and
// composable attention paths see different alignments of the same values.
TEST(Gemm, RoundingIndependentOfOperandAddresses) {
  Rng rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t m : {1, 3, 5, 17}) {
    for (std::size_t k : {1, 2, 5, 16}) {
      for (std::size_t cols : {1, 3, 5, 33}) {
        for (int flags = 0; flags < 8; ++flags) {
          const bool ta = flags & 1, tb = flags & 2, acc = flags & 4;
          std::vector<double> a(m * k), b(k * cols), c0(m * cols);
          for (auto* v : {&a, &b, &c0}) {
            for (auto& x : *v) x = n(rng);
          }
          std::vector<double> first;
          for (std::size_t off = 0; off < 8; ++off) {
            std::vector<double> A(a.size() + 8), B(b.size() + 8), C(c0.size() + 8);
            std::copy(a.begin(), a.end(), A.begin() + off);
            std::copy(b.begin(), b.end(), B.begin() + (7 - off));
            std::copy(c0.begin(), c0.end(), C.begin() + (off * 3) % 8);
            double* c = C.data() + (off * 3) % 8;
            kernels::gemm(ta, tb, m, cols, k, A.data() + off, ta ? m : k, B.data() + (7 - off),
                          tb ? k : cols, c, cols, acc);
            std::vector<double> got(c, c + c0.size());
            if (off == 0) first = got;
            EXPECT_EQ(got, first) << m << "x" << cols << "x" << k << " flags " << flags;
          }
        }
      }
    }
  }
}
