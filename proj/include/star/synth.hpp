#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "star/event_set.hpp"

namespace star {

// Generator for irregular multivariate episodes with a planted label: an
// episode is positive iff some high event of variable a lies within
// trigger_gap_hours of some high event of variable b ("high" meaning a
// standardized value above threshold).
struct SynthConfig {
  int num_vars = 10;
  std::size_t max_len = 128;
  double window_hours = 48.0;
  double rate_per_var = 0.2;  // events per hour per variable
  std::size_t n_train = 2000;
  std::size_t n_val = 400;
  std::size_t n_test = 400;
  int trigger_a = 0;
  int trigger_b = 1;
  double trigger_gap_hours = 1.0;
  double threshold = 0.25;
  double label_noise = 0.05;
  // Positive episodes are kept with this probability (1 keeps the natural
  // class balance; lower values make positives rare).
  double positive_keep = 1.0;
  std::uint64_t seed = 20240501;

  // Throws std::invalid_argument.
  void validate() const;
};

nlohmann::ordered_json synth_config_to_json(const SynthConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Clean (noise-free) label of an emitted episode under the config's trigger.
int trigger_label(const Episode& episode, const SynthConfig& config);

// Train/val/test splits plus a manifest whose value statistics come from the
// train split. Fully determined by config.seed; each episode draws from its
// own derived stream. Throws std::runtime_error("degenerate label
// distribution") if 10 attempts leave the train split without positives.
Dataset generate_dataset(const SynthConfig& config);

}  // namespace star
