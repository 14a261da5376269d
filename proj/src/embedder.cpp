#include "star/embedder.hpp"

#include <cmath>
#include <stdexcept>

#include "star/ops.hpp"

namespace star {

namespace {
Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}
}  // namespace

EmbedderParams init_embedder(std::size_t dim, std::size_t num_vars, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  EmbedderParams p;
  p.cls = uniform({dim}, bound, rng);
  p.demo_w = uniform({2, dim}, bound, rng);
  p.demo_b = uniform({dim}, bound, rng);
  p.var_table = uniform({num_vars, dim}, bound, rng);
  p.time_w1 = uniform({1, dim}, bound, rng);
  p.time_b1 = uniform({dim}, bound, rng);
  p.val_w1 = uniform({1, dim}, bound, rng);
  p.val_b1 = uniform({dim}, bound, rng);
  return p;
}

Tensor embed_demo(double age_std, int sex, const EmbedderParams& params) {
  if (sex != 0 && sex != 1) throw std::invalid_argument("embed_demo: sex must be 0 or 1");
  auto in = Tensor::from_data({1, 2}, {age_std, static_cast<double>(sex)});
  auto out = ops::tanh(ops::add_rowwise(ops::matmul(in, params.demo_w), params.demo_b));
  return ops::reshape(out, {params.dim()});
}

Tensor embed_triplets(const Batch& batch, const EmbedderParams& params, const AgeScaler& ages,
                      double time_unit) {
  const std::size_t B = batch.batch_size;
  const std::size_t L = batch.max_len;
  const std::size_t S = batch.seq_len;
  const std::size_t D = params.dim();
  const std::size_t total = B * S;

  // Real events only; padded rows never enter the graph.
  std::vector<double> times;
  std::vector<double> values;
  std::vector<long> vars;
  std::vector<std::size_t> event_rows;
  auto x = batch.events.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(batch.input_lengths[b]); ++i) {
      const double* row = x.data() + (b * L + i) * 3;
      times.push_back(row[0] / time_unit);
      values.push_back(row[1]);
      vars.push_back(static_cast<long>(row[2]));
      event_rows.push_back(b * S + 2 + i);
    }
  }
  const std::size_t n = times.size();
  auto t_col = Tensor::from_data({n, 1}, std::move(times));
  auto v_col = Tensor::from_data({n, 1}, std::move(values));
  auto events = ops::add(
      ops::add(ops::gather_rows(params.var_table, vars),
               ops::tanh(ops::add_rowwise(ops::matmul(t_col, params.time_w1), params.time_b1))),
      ops::tanh(ops::add_rowwise(ops::matmul(v_col, params.val_w1), params.val_b1)));

  std::vector<double> demo_in(B * 2);
  auto demo = batch.demo.data();
  std::vector<std::size_t> cls_rows(B);
  std::vector<std::size_t> demo_rows(B);
  for (std::size_t b = 0; b < B; ++b) {
    demo_in[b * 2] = ages.apply(demo[b * 2]);
    demo_in[b * 2 + 1] = demo[b * 2 + 1];
    cls_rows[b] = b * S;
    demo_rows[b] = b * S + 1;
  }
  auto demo_tokens = ops::tanh(ops::add_rowwise(
      ops::matmul(Tensor::from_data({B, 2}, std::move(demo_in)), params.demo_w), params.demo_b));
  std::vector<long> zeros(B, 0);
  auto cls_tokens = ops::gather_rows(params.cls, zeros);

  auto h0 = ops::add(ops::add(ops::scatter_rows(events, event_rows, total),
                              ops::scatter_rows(cls_tokens, cls_rows, total)),
                     ops::scatter_rows(demo_tokens, demo_rows, total));
  return ops::reshape(h0, {B, S, D});
}

}  // namespace star
