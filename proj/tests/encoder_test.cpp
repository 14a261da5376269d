#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include <gtest/gtest.h>

#include "reference_encoder.hpp"
#include "star/checkpoint.hpp"
#include "star/encoder.hpp"
#include "star/gradcheck.hpp"
#include "star/model.hpp"
#include "star/optimizer.hpp"
#include "test_util.hpp"

using namespace star;

namespace {

// Tensor handles alias their storage, so a copy writes through.
void fill(Tensor t, double v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

std::vector<BiasKind> kinds(std::initializer_list<BiasKind> k) { return k; }

}  // namespace

TEST(Schedule, TwoStageExamples) {
  using enum BiasKind;
  EXPECT_EQ(parse_schedule("nb-tb").kinds, kinds({nb, nb, tb, tb}));
  EXPECT_EQ(parse_schedule("vt-vt").kinds, kinds({vtb, vtb, vtb, vtb}));
  EXPECT_EQ(parse_schedule("tb-nb").kinds, kinds({tb, tb, nb, nb}));
  EXPECT_EQ(parse_schedule("vtb-vb").kinds, kinds({vtb, vtb, vb, vb}));
  EXPECT_EQ(parse_schedule("nb,tb,vb,vt").kinds, kinds({nb, tb, vb, vtb}));
  EXPECT_EQ(parse_schedule("vb-tb", 2).kinds, kinds({vb, tb}));
}

TEST(Schedule, RoundTripToCanonicalText) {
  for (auto name : kAblationSchedules) {
    EXPECT_EQ(format_schedule(parse_schedule(name)), name);
  }
  EXPECT_EQ(format_schedule(parse_schedule("vtb-vtb")), "vt-vt");
  EXPECT_EQ(format_schedule(parse_schedule("nb,nb,tb,tb")), "nb-tb");
  EXPECT_EQ(format_schedule(parse_schedule(" tb , vb,vt,nb ")), "tb,vb,vt,nb");
  const std::string odd = format_schedule(parse_schedule("nb,vt,tb,tb"));
  EXPECT_EQ(format_schedule(parse_schedule(odd)), odd);
}

TEST(Schedule, Errors) {
  try {
    parse_schedule("nb-xb");
    FAIL();
  } catch (const std::invalid_argument& ex) {
    const std::string msg = ex.what();
    for (const char* kind : {"nb", "tb", "vb", "vt"}) {
      EXPECT_NE(msg.find(kind), std::string::npos) << msg;
    }
  }
  EXPECT_THROW(parse_schedule("nb,tb,vb"), std::invalid_argument);
  EXPECT_THROW(parse_schedule("nb-tb-vb"), std::invalid_argument);
  EXPECT_THROW(parse_schedule("nb-tb", 3), std::invalid_argument);
  EXPECT_THROW(parse_schedule(""), std::invalid_argument);
}

TEST(Encoder, ZeroWeightsLeaveOnlyTheFinalNorm) {
  Rng rng(1);
  auto config = fixtures::small_config(4);
  auto model = StarModel::init(config, 3);
  for (auto& layer : model.encoder.layers) {
    for (const Tensor* t : {&layer.attn.wq, &layer.attn.wk, &layer.attn.wv, &layer.attn.wo,
                            &layer.ff_w1, &layer.ff_b1, &layer.ff_w2, &layer.ff_b2}) {
      fill(*t, 0.0);
    }
  }
  auto eps = fixtures::random_episodes(rng, 3, 4, 6);
  auto batch = build_batch(eps, 6);
  auto h0 = embed_triplets(batch, model.embedder);
  auto out = encoder_forward(h0, parse_schedule("nb-nb", 2), model.encoder, model.bias, batch);
  auto expect = ops::layer_norm(h0, model.encoder.final_gamma, model.encoder.final_beta);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.at(i), expect.at(i));
}

TEST(Encoder, UnbiasedScheduleMatchesReferenceBitForBit) {
  Rng rng(2);
  auto model = StarModel::init(fixtures::small_config(5), 4);
  auto eps = fixtures::random_episodes(rng, 5, 5, 9);
  auto batch = build_batch(eps, 9);
  const auto schedule = parse_schedule("nb-nb", 2);
  auto fast = model.forward(batch, schedule);
  auto ref = fixtures::reference_logits(model, batch, schedule);
  for (std::size_t b = 0; b < eps.size(); ++b) EXPECT_EQ(fast.at(b), ref.at(b));
}

TEST(Encoder, BiasedSchedulesMatchReference) {
  Rng rng(3);
  auto model = StarModel::init(fixtures::small_config(5), 5);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& a : model.bias.affinity.mutable_data()) a = n(rng);
  for (auto& w : model.bias.omega.mutable_data()) w = std::log(3.0) + n(rng);
  auto eps = fixtures::random_episodes(rng, 4, 5, 8);
  auto batch = build_batch(eps, 8);
  for (auto name : kAblationSchedules) {
    const auto schedule = parse_schedule(name, 2);
    auto fast = model.forward(batch, schedule);
    auto ref = fixtures::reference_logits(model, batch, schedule);
    for (std::size_t b = 0; b < eps.size(); ++b) {
      EXPECT_NEAR(fast.at(b), ref.at(b), 1e-12) << name;
    }
  }
}

TEST(Encoder, DuplicateEpisodesGiveIdenticalRows) {
  Rng rng(4);
  auto model = StarModel::init(fixtures::small_config(5), 6);
  auto e = fixtures::random_episode(rng, 5, 4);
  auto other = fixtures::random_episode(rng, 5, 7);
  std::vector<Episode> eps = {e, other, e};
  auto logits = model.forward(build_batch(eps, 7), parse_schedule("vt-tb", 2));
  EXPECT_EQ(logits.at(0), logits.at(2));
  std::vector<Episode> alone = {e};
  EXPECT_NEAR(model.forward(build_batch(alone, 7), parse_schedule("vt-tb", 2)).at(0),
              logits.at(0), 1e-12);
}

TEST(Encoder, VariableBiasAtZeroAffinityMatchesUnbiased) {
  Rng rng(5);
  auto model = StarModel::init(ModelConfig{}, 7);
  auto eps = fixtures::random_episodes(rng, 6, 10, 12);
  auto batch = build_batch(eps, 12);
  auto nb = model.forward(batch, parse_schedule("nb-nb"));
  auto vb = model.forward(batch, parse_schedule("vb-vb"));
  for (std::size_t b = 0; b < eps.size(); ++b) EXPECT_NEAR(nb.at(b), vb.at(b), 1e-12);
}

TEST(Predict, Examples) {
  PredictionHead head{Tensor::zeros({3}), Tensor::from_data({1}, {0.25})};
  auto h = Tensor::from_data({2, 2, 3}, {1, 2, 3, 9, 9, 9, -4, 5, 6, 9, 9, 9});
  auto z = predict(h, head);
  EXPECT_EQ(z.at(0), 0.25);
  EXPECT_EQ(z.at(1), 0.25);

  head.w = Tensor::from_data({3}, {0.5, -1, 2});
  auto once = predict(h, head);
  head.w = Tensor::from_data({3}, {1, -2, 4});
  auto twice = predict(h, head);
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_DOUBLE_EQ(twice.at(b) - 0.25, 2.0 * (once.at(b) - 0.25));
  }
  // Only position 0 of each episode is read.
  EXPECT_DOUBLE_EQ(once.at(0), 0.5 - 2 + 6 + 0.25);

  PredictionHead unit{Tensor::from_data({3}, {0, 1, 0}), Tensor::zeros({1})};
  EXPECT_EQ(predict(Tensor::from_data({1, 1, 3}, {0, 1, 0}), unit).at(0), 1.0);
}

TEST(BceLoss, Examples) {
  std::vector<int> one = {1};
  std::vector<int> zero = {0};
  EXPECT_NEAR(bce_loss(Tensor::from_data({1}, {0.0}), one).item(), std::log(2.0), 1e-15);
  const double big = bce_loss(Tensor::from_data({1}, {30.0}), one).item();
  EXPECT_LT(big, 1e-12);
  EXPECT_GE(big, 0.0);
  const double oracle = std::log1p(std::exp(-2.0));
  EXPECT_NEAR(bce_loss(Tensor::from_data({1}, {-2.0}), zero).item(), oracle, 1e-15);
  EXPECT_NEAR(oracle, 0.126928, 5e-7);
  for (double z : {-800.0, 800.0}) {
    for (int y : {0, 1}) {
      std::vector<int> label = {y};
      EXPECT_TRUE(std::isfinite(bce_loss(Tensor::from_data({1}, {z}), label).item()));
    }
  }
  std::vector<int> two = {1, 0};
  EXPECT_NEAR(bce_loss(Tensor::from_data({2}, {0.0, -2.0}), two).item(),
              0.5 * (std::log(2.0) + oracle), 1e-15);
}

TEST(Model, GradientsPassFiniteDifferences) {
  Rng rng(6);
  auto config = fixtures::small_config(4);
  config.omega_init = std::log(4.0);
  auto model = StarModel::init(config, 8);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& a : model.bias.affinity.mutable_data()) a = n(rng);
  auto eps = fixtures::random_episodes(rng, 2, 4, 5);
  auto batch = build_batch(eps, 5);
  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  for (const char* name : {"vt-vt", "nb-tb", "vb-nb"}) {
    const auto schedule = parse_schedule(name, 2);
    auto res = gradient_check([&] { return model.loss(batch, schedule); }, params);
    EXPECT_LT(res.max_relative_error, 1e-6) << name << " param " << res.worst_param;
  }
}

TEST(Model, InitIsDeterministicAndScheduleFree) {
  auto config = fixtures::small_config(6);
  auto a = StarModel::init(config, 11);
  auto b = StarModel::init(config, 11);
  auto c = StarModel::init(config, 12);
  auto pa = a.parameters();
  auto pb = b.parameters();
  auto pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                           pb[i].tensor.data().begin()));
    differs |= !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                           pc[i].tensor.data().begin());
  }
  EXPECT_TRUE(differs);

  std::set<std::string> groups;
  for (const auto& p : pa) groups.insert(p.group);
  EXPECT_EQ(groups, (std::set<std::string>{"embedder", "attention", "layer_norm", "ffn", "head",
                                           "bias"}));
}

TEST(Model, CloneSharesNoStorage) {
  auto model = StarModel::init(fixtures::small_config(3), 2);
  auto copy = model.clone();
  const double before = copy.encoder.head.c.at(0);
  model.encoder.head.c.mutable_data()[0] = before + 1.0;
  EXPECT_EQ(copy.encoder.head.c.at(0), before);
}

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c;
  c.dim = 10;
  c.heads = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.ages = {61.5, 14.25};
  c.omega_init = 0.3;
  c.time_unit = 24.0;
  auto back = model_config_from_json(model_config_to_json(c));
  EXPECT_EQ(model_config_to_json(back).dump(), model_config_to_json(c).dump());
  c.time_unit = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({w}, {.learning_rate = 0.1});
  opt.zero_grad();
  ops::sum(ops::mul(w, Tensor::from_data({3}, {3.0, -0.01, 0.0}))).backward();
  opt.step();
  // Bias-corrected first step is lr * g / (|g| + eps) per coordinate.
  EXPECT_NEAR(w.at(0), 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.at(1), -2.0 + 0.1 * 0.01 / (0.01 + 1e-8), 1e-15);
  EXPECT_EQ(w.at(2), 0.5);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MatchesHandRolledMoments) {
  auto w = Tensor::from_data({1}, {2.0}, true);
  Adam opt({w}, {.learning_rate = 0.05});
  double x = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    opt.zero_grad();
    ops::sum(ops::mul(w, w)).backward();
    opt.step();
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w.at(0), x, 1e-13) << t;
  }
}

TEST(Adam, UntouchedParameterKeepsItsValue) {
  auto used = Tensor::from_data({1}, {1.0}, true);
  auto unused = Tensor::from_data({2}, {4.0, 5.0}, true);
  Adam opt({used, unused});
  opt.zero_grad();
  ops::sum(used).backward();
  opt.step();
  EXPECT_EQ(unused.at(0), 4.0);
  EXPECT_EQ(unused.at(1), 5.0);
  EXPECT_NE(used.at(0), 1.0);
}

TEST(Checkpoint, JsonRoundTripRestoresEveryValue) {
  Rng rng(9);
  auto config = fixtures::small_config(4);
  config.ages = {58.0, 11.0};
  Checkpoint ckpt{StarModel::init(config, 21), "tb-vb", 7, "state", {{"best_epoch", 3}}};
  std::normal_distribution<double> n;
  for (auto& a : ckpt.model.bias.affinity.mutable_data()) a = n(rng) / 3.0;
  auto text = checkpoint_to_json(ckpt).dump();
  auto back = checkpoint_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.schedule, "tb-vb");
  EXPECT_EQ(back.max_len, 7u);
  EXPECT_EQ(back.rng_state, "state");
  EXPECT_EQ(back.run["best_epoch"], 3);
  EXPECT_EQ(checkpoint_to_json(back).dump(), text);
  auto eps = fixtures::random_episodes(rng, 3, 4, 7);
  auto batch = build_batch(eps, 7);
  const auto schedule = parse_schedule("tb-vb", 2);
  auto a = ckpt.model.forward(batch, schedule);
  auto b = back.model.forward(batch, schedule);
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(a.at(i), b.at(i));

  auto j = checkpoint_to_json(ckpt);
  j["format"] = "other/2";
  EXPECT_THROW(checkpoint_from_json(j), std::invalid_argument);
  auto missing = checkpoint_to_json(ckpt);
  missing["params"].erase(0);
  EXPECT_THROW(checkpoint_from_json(missing), std::invalid_argument);
}
