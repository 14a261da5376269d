#include "star/checkpoint.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

namespace star {

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["model"] = model_config_to_json(ckpt.model.config);
  j["schedule"] = ckpt.schedule;
  j["L"] = ckpt.max_len;
  j["rng_state"] = ckpt.rng_state;
  j["run"] = nlohmann::ordered_json::parse(ckpt.run.is_null() ? "{}" : ckpt.run.dump());
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : ckpt.model.parameters()) {
    nlohmann::ordered_json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape();
    entry["data"] = std::vector<double>(p.tensor.data().begin(), p.tensor.data().end());
    params.push_back(std::move(entry));
  }
  j["params"] = std::move(params);
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kCheckpointFormat) {
    throw std::invalid_argument("not a " + std::string(kCheckpointFormat) + " checkpoint");
  }
  Checkpoint ckpt;
  const ModelConfig config = model_config_from_json(j.at("model"));
  // Shapes come from a fresh init; values are then overwritten.
  ckpt.model = StarModel::init(config, 0);
  ckpt.schedule = j.at("schedule").get<std::string>();
  parse_schedule(ckpt.schedule, config.layers);
  ckpt.max_len = j.at("L").get<std::size_t>();
  ckpt.rng_state = j.value("rng_state", "");
  if (auto it = j.find("run"); it != j.end()) ckpt.run = *it;

  std::map<std::string, const nlohmann::json*> stored;
  for (const auto& entry : j.at("params")) {
    stored[entry.at("name").get<std::string>()] = &entry;
  }
  for (auto& p : ckpt.model.parameters()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw std::invalid_argument("checkpoint lacks parameter " + p.name);
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw std::invalid_argument("checkpoint parameter " + p.name + " has shape " +
                                  shape_string(shape) + ", model expects " +
                                  shape_string(p.tensor.shape()));
    }
    const auto data = it->second->at("data").get<std::vector<double>>();
    if (data.size() != p.tensor.size()) {
      throw std::invalid_argument("checkpoint parameter " + p.name + " has wrong length");
    }
    std::copy(data.begin(), data.end(), p.tensor.mutable_data().begin());
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw std::invalid_argument("checkpoint has unknown parameter " + stored.begin()->first);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const std::exception& ex) {
    throw std::invalid_argument(path.string() + ": " + ex.what());
  }
}

}  // namespace star
