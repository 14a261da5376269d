#include "star/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "star/seeding.hpp"

namespace star {

namespace {

constexpr int kMaxAttempts = 10;
constexpr int kMaxLengthRedraws = 1000;

struct RawSplit {
  std::vector<Episode> episodes;
};

// Per-variable (mean, sd) of the raw measurement scale.
struct Baselines {
  std::vector<double> mean;
  std::vector<double> sd;
};

Baselines draw_baselines(const SynthConfig& c) {
  Rng rng(derive_seed(c.seed, "baselines"));
  std::uniform_real_distribution<double> mean(0.0, 100.0);
  std::uniform_real_distribution<double> sd(1.0, 10.0);
  Baselines b;
  for (int f = 0; f < c.num_vars; ++f) {
    b.mean.push_back(mean(rng));
    b.sd.push_back(sd(rng));
  }
  return b;
}

Episode draw_episode(const SynthConfig& c, const Baselines& base, std::uint64_t index,
                     int attempt) {
  Rng rng(derive_seed(c.seed, "episode", index, static_cast<std::uint64_t>(attempt)));
  std::poisson_distribution<int> count(c.rate_per_var * c.window_hours);
  std::uniform_real_distribution<double> when(0.0, c.window_hours);
  std::normal_distribution<double> noise(0.0, 1.0);

  Episode e;
  e.id = static_cast<long>(index);
  for (int redraw = 0;; ++redraw) {
    if (redraw == kMaxLengthRedraws) {
      throw std::runtime_error("cannot draw an episode with 1..L events; lower rate_per_var");
    }
    std::vector<int> counts(static_cast<std::size_t>(c.num_vars));
    for (auto& k : counts) k = count(rng);
    const auto total = static_cast<std::size_t>(std::accumulate(counts.begin(), counts.end(), 0));
    if (total == 0 || total > c.max_len) continue;
    std::vector<std::size_t> order(total);
    std::vector<double> times;
    std::vector<double> values;
    std::vector<int> vars;
    for (int f = 0; f < c.num_vars; ++f) {
      for (int k = 0; k < counts[static_cast<std::size_t>(f)]; ++k) {
        times.push_back(when(rng));
        values.push_back(base.mean[static_cast<std::size_t>(f)] +
                         base.sd[static_cast<std::size_t>(f)] * noise(rng));
        vars.push_back(f);
      }
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    for (auto i : order) {
      e.times.push_back(times[i]);
      e.values.push_back(values[i]);
      e.vars.push_back(vars[i]);
    }
    break;
  }
  std::normal_distribution<double> age(65.0, 15.0);
  std::bernoulli_distribution sex(0.5);
  e.age = std::clamp(age(rng), 18.0, 95.0);
  e.sex = sex(rng) ? 1 : 0;
  return e;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_vars < 2) throw std::invalid_argument("synth: F must be at least 2");
  if (max_len == 0) throw std::invalid_argument("synth: L must be positive");
  if (!(window_hours > 0.0)) throw std::invalid_argument("synth: window_hours must be positive");
  if (!(rate_per_var > 0.0)) throw std::invalid_argument("synth: rate_per_var must be positive");
  if (trigger_a == trigger_b) throw std::invalid_argument("synth: trigger variables must differ");
  if (trigger_a < 0 || trigger_a >= num_vars || trigger_b < 0 || trigger_b >= num_vars) {
    throw std::invalid_argument("synth: trigger variables must be < F");
  }
  if (!(trigger_gap_hours >= 0.0)) throw std::invalid_argument("synth: trigger gap must be >= 0");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) {
    throw std::invalid_argument("synth: label_noise must lie in [0, 1)");
  }
  if (!(positive_keep > 0.0 && positive_keep <= 1.0)) {
    throw std::invalid_argument("synth: positive_keep must lie in (0, 1]");
  }
  if (n_train == 0) throw std::invalid_argument("synth: n_train must be positive");
  const double expected_len = rate_per_var * window_hours * num_vars;
  if (expected_len > static_cast<double>(max_len)) {
    throw std::invalid_argument("synth: expected episode length " + std::to_string(expected_len) +
                                " exceeds L=" + std::to_string(max_len));
  }
}

nlohmann::ordered_json synth_config_to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["F"] = c.num_vars;
  j["L"] = c.max_len;
  j["window_hours"] = c.window_hours;
  j["rate_per_var"] = c.rate_per_var;
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["n_test"] = c.n_test;
  j["trigger_pair"] = {c.trigger_a, c.trigger_b};
  j["trigger_gap_hours"] = c.trigger_gap_hours;
  j["threshold"] = c.threshold;
  j["label_noise"] = c.label_noise;
  j["positive_keep"] = c.positive_keep;
  j["seed"] = c.seed;
  return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth config must be a JSON object");
  SynthConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "F") {
      c.num_vars = value.get<int>();
    } else if (key == "L") {
      c.max_len = value.get<std::size_t>();
    } else if (key == "window_hours") {
      c.window_hours = value.get<double>();
    } else if (key == "rate_per_var") {
      c.rate_per_var = value.get<double>();
    } else if (key == "n_train") {
      c.n_train = value.get<std::size_t>();
    } else if (key == "n_val") {
      c.n_val = value.get<std::size_t>();
    } else if (key == "n_test") {
      c.n_test = value.get<std::size_t>();
    } else if (key == "trigger_pair") {
      auto pair = value.get<std::vector<int>>();
      if (pair.size() != 2) throw std::invalid_argument("trigger_pair needs two variable ids");
      c.trigger_a = pair[0];
      c.trigger_b = pair[1];
    } else if (key == "trigger_gap_hours") {
      c.trigger_gap_hours = value.get<double>();
    } else if (key == "threshold") {
      c.threshold = value.get<double>();
    } else if (key == "label_noise") {
      c.label_noise = value.get<double>();
    } else if (key == "positive_keep") {
      c.positive_keep = value.get<double>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw std::invalid_argument("unknown synth config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

int trigger_label(const Episode& e, const SynthConfig& c) {
  std::vector<double> high_a;
  std::vector<double> high_b;
  for (std::size_t i = 0; i < e.length(); ++i) {
    if (e.values[i] <= c.threshold) continue;
    if (e.vars[i] == c.trigger_a) high_a.push_back(e.times[i]);
    if (e.vars[i] == c.trigger_b) high_b.push_back(e.times[i]);
  }
  std::sort(high_a.begin(), high_a.end());
  std::sort(high_b.begin(), high_b.end());
  // Sweep: for each a-time, the nearest b-times bracket it.
  std::size_t j = 0;
  for (double ta : high_a) {
    while (j < high_b.size() && high_b[j] < ta) ++j;
    if (j < high_b.size() && high_b[j] - ta <= c.trigger_gap_hours) return 1;
    if (j > 0 && ta - high_b[j - 1] <= c.trigger_gap_hours) return 1;
  }
  return 0;
}

Dataset generate_dataset(const SynthConfig& config) {
  config.validate();
  const Baselines base = draw_baselines(config);
  const std::size_t sizes[3] = {config.n_train, config.n_val, config.n_test};

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<Episode> splits[3];
    std::uint64_t index = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t i = 0; i < sizes[s]; ++i) {
        splits[s].push_back(draw_episode(config, base, index++, attempt));
      }
    }

    // Standardize with train statistics so every split shares them.
    const auto F = static_cast<std::size_t>(config.num_vars);
    std::vector<double> sum(F, 0.0);
    std::vector<double> sum_sq(F, 0.0);
    std::vector<std::size_t> n(F, 0);
    double age_sum = 0.0;
    double age_sq = 0.0;
    for (const auto& e : splits[0]) {
      for (std::size_t i = 0; i < e.length(); ++i) {
        const auto f = static_cast<std::size_t>(e.vars[i]);
        sum[f] += e.values[i];
        sum_sq[f] += e.values[i] * e.values[i];
        ++n[f];
      }
      age_sum += e.age;
      age_sq += e.age * e.age;
    }
    DatasetManifest manifest;
    manifest.num_vars = config.num_vars;
    manifest.max_len = config.max_len;
    for (std::size_t f = 0; f < F; ++f) {
      double mean = 0.0;
      double sd = 1.0;
      if (n[f] > 1) {
        mean = sum[f] / static_cast<double>(n[f]);
        const double var = sum_sq[f] / static_cast<double>(n[f]) - mean * mean;
        sd = var > 0.0 ? std::sqrt(var) : 1.0;
      }
      manifest.value_means.push_back(mean);
      manifest.value_stds.push_back(sd);
    }
    const double n_train = static_cast<double>(splits[0].size());
    manifest.age_mean = age_sum / n_train;
    const double age_var = age_sq / n_train - manifest.age_mean * manifest.age_mean;
    manifest.age_std = age_var > 0.0 ? std::sqrt(age_var) : 1.0;

    Dataset d;
    std::vector<Episode>* out[3] = {&d.train, &d.val, &d.test};
    for (int s = 0; s < 3; ++s) {
      for (auto& e : splits[s]) {
        for (std::size_t i = 0; i < e.length(); ++i) {
          const auto f = static_cast<std::size_t>(e.vars[i]);
          e.values[i] = (e.values[i] - manifest.value_means[f]) / manifest.value_stds[f];
        }
        e.label = trigger_label(e, config);
        const auto id = static_cast<std::uint64_t>(e.id);
        Rng label_rng(derive_seed(config.seed, "label-noise", id, static_cast<std::uint64_t>(attempt)));
        if (std::bernoulli_distribution(config.label_noise)(label_rng)) e.label = 1 - e.label;
        if (e.label == 1 && config.positive_keep < 1.0) {
          Rng keep_rng(derive_seed(config.seed, "keep", id, static_cast<std::uint64_t>(attempt)));
          if (!std::bernoulli_distribution(config.positive_keep)(keep_rng)) continue;
        }
        out[s]->push_back(std::move(e));
      }
    }
    const bool has_positive = std::any_of(d.train.begin(), d.train.end(),
                                          [](const Episode& e) { return e.label == 1; });
    if (!has_positive) continue;

    manifest.split_sizes = {{"train", d.train.size()}, {"val", d.val.size()}, {"test", d.test.size()}};
    auto gen = synth_config_to_json(config);
    gen["attempt"] = attempt;
    manifest.generator = nlohmann::json::parse(gen.dump());
    d.manifest = std::move(manifest);
    return d;
  }
  throw std::runtime_error("degenerate label distribution");
}

}  // namespace star
