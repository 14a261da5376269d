#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "star/model.hpp"

namespace star {

inline constexpr const char* kCheckpointFormat = "star-checkpoint/1";

// Everything needed to rebuild and evaluate a trained model.
struct Checkpoint {
  StarModel model;
  std::string schedule;  // canonical schedule text
  std::size_t max_len = 0;  // dataset L the model was trained against
  std::string rng_state;    // data-order generator state at save time
  nlohmann::json run;       // free-form run metadata (config, best epoch)
};

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace star
