#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/attention.hpp"
#include "star/embedder.hpp"
#include "star/encoder.hpp"

namespace star {

struct ModelConfig {
  std::size_t num_vars = 10;  // F
  std::size_t dim = 64;       // D
  std::size_t heads = 4;      // H
  std::size_t layers = kDefaultEncoderLayers;
  std::size_t ff_dim = 128;
  double omega_init = default_omega_init();
  double bias_epsilon = kDefaultBiasEpsilon;
  // Hours per unit of embedder time. Raw hours saturate the tanh time
  // projection at this init; the attention bias always sees hours.
  double time_unit = 48.0;
  AgeScaler ages;

  // Throws std::invalid_argument for inconsistent dimensions.
  void validate() const;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct NamedParam {
  std::string name;
  std::string group;  // embedder, attention, layer_norm, ffn, head, bias
  Tensor tensor;
};

// All learnable state of the set encoder.
struct StarModel {
  ModelConfig config;
  EmbedderParams embedder;
  BiasParams bias;
  EncoderParams encoder;

  // Deterministic given (config, seed); independent of any schedule.
  static StarModel init(const ModelConfig& config, std::uint64_t seed);

  // Stable order; names are unique and used as checkpoint keys.
  std::vector<NamedParam> parameters() const;

  // Deep copy with no shared storage.
  StarModel clone() const;

  Tensor forward(const Batch& batch, const BiasSchedule& schedule,
                 AttentionProbe* probe = nullptr) const;
  Tensor loss(const Batch& batch, const BiasSchedule& schedule) const;
};

}  // namespace star
