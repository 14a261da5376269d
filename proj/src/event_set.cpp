#include "star/event_set.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string_view>

#include "star/kernels.hpp"

namespace star {

using nlohmann::json;
using nlohmann::ordered_json;

void validate_episode(const Episode& e, int num_vars) {
  if (e.times.size() != e.values.size() || e.times.size() != e.vars.size()) {
    throw std::invalid_argument("episode times/values/vars lengths differ");
  }
  if (e.times.empty()) throw std::invalid_argument("episode has no events");
  for (int v : e.vars) {
    if (v < 0 || v >= num_vars) {
      throw std::invalid_argument("unknown variable id " + std::to_string(v) + " (F=" +
                                  std::to_string(num_vars) + ")");
    }
  }
  if (e.sex != 0 && e.sex != 1) throw std::invalid_argument("sex must be 0 or 1");
  if (e.label != 0 && e.label != 1) throw std::invalid_argument("label must be 0 or 1");
}

double reference_time(const Episode& episode) {
  if (episode.times.empty()) return 0.0;
  return *std::max_element(episode.times.begin(), episode.times.end());
}

Tensor padding_mask(std::span<const int> input_lengths, std::size_t seq_len) {
  std::vector<double> mask(input_lengths.size() * seq_len, kernels::kMaskedLogit);
  for (std::size_t b = 0; b < input_lengths.size(); ++b) {
    const std::size_t valid = static_cast<std::size_t>(input_lengths[b]) + 2;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(b * seq_len), valid, 0.0);
  }
  return Tensor::from_data({input_lengths.size(), seq_len}, std::move(mask));
}

TokenMetadata token_metadata(const Batch& batch) {
  const std::size_t B = batch.batch_size;
  const std::size_t L = batch.max_len;
  const std::size_t S = batch.seq_len;
  TokenMetadata meta;
  meta.t_tilde.assign(B * S, 0.0);
  meta.s_tilde.assign(B * S, kSpecialVar);
  auto x = batch.events.data();
  for (std::size_t b = 0; b < B; ++b) {
    const auto len = static_cast<std::size_t>(batch.input_lengths[b]);
    double t_ref = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double t = x[(b * L + i) * 3];
      t_ref = (i == 0) ? t : std::max(t_ref, t);
    }
    meta.t_tilde[b * S] = t_ref;
    meta.t_tilde[b * S + 1] = t_ref;
    for (std::size_t i = 0; i < len; ++i) {
      meta.t_tilde[b * S + 2 + i] = x[(b * L + i) * 3];
      meta.s_tilde[b * S + 2 + i] = static_cast<int>(x[(b * L + i) * 3 + 2]);
    }
  }
  return meta;
}

Batch build_batch(std::span<const Episode* const> episodes, std::size_t max_len) {
  if (episodes.empty()) throw std::invalid_argument("empty batch");
  Batch batch;
  const std::size_t B = episodes.size();
  const std::size_t L = max_len;
  const std::size_t S = L + 2;
  batch.batch_size = B;
  batch.max_len = L;
  batch.seq_len = S;

  std::vector<double> x(B * L * 3, 0.0);
  std::vector<double> demo(B * 2);
  for (std::size_t b = 0; b < B; ++b) {
    const Episode& e = *episodes[b];
    if (e.times.size() != e.values.size() || e.times.size() != e.vars.size()) {
      throw std::invalid_argument("episode times/values/vars lengths differ");
    }
    if (e.length() == 0) throw std::invalid_argument("episode has no events");
    if (e.length() > L) {
      throw std::invalid_argument("episode exceeds max length (" + std::to_string(e.length()) +
                                  " > " + std::to_string(L) + ")");
    }
    for (std::size_t i = 0; i < L; ++i) {
      double* row = x.data() + (b * L + i) * 3;
      if (i < e.length()) {
        row[0] = e.times[i];
        row[1] = e.values[i];
        row[2] = static_cast<double>(e.vars[i]);
      } else {
        row[2] = static_cast<double>(kSpecialVar);
      }
    }
    batch.input_lengths.push_back(static_cast<int>(e.length()));
    demo[b * 2] = e.age;
    demo[b * 2 + 1] = static_cast<double>(e.sex);
    batch.labels.push_back(e.label);
  }
  batch.events = Tensor::from_data({B, L, 3}, std::move(x));
  batch.demo = Tensor::from_data({B, 2}, std::move(demo));
  auto meta = token_metadata(batch);
  batch.t_tilde = Tensor::from_data({B, S}, std::move(meta.t_tilde));
  batch.s_tilde = std::move(meta.s_tilde);
  batch.pad_mask = padding_mask(batch.input_lengths, S);
  return batch;
}

Batch build_batch(std::span<const Episode> episodes, std::size_t max_len) {
  std::vector<const Episode*> ptrs;
  ptrs.reserve(episodes.size());
  for (const auto& e : episodes) ptrs.push_back(&e);
  return build_batch(std::span<const Episode* const>(ptrs), max_len);
}

// --- JSON Lines -------------------------------------------------------------

namespace {
const json& require_key(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing key '") + key + "'");
  return *it;
}
}  // namespace

Episode episode_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("episode must be a JSON object");
  Episode e;
  if (auto it = j.find("id"); it != j.end()) e.id = it->get<long>();
  e.times = require_key(j, "times").get<std::vector<double>>();
  e.values = require_key(j, "values").get<std::vector<double>>();
  e.vars = require_key(j, "vars").get<std::vector<int>>();
  e.age = require_key(j, "age").get<double>();
  e.sex = require_key(j, "sex").get<int>();
  e.label = require_key(j, "label").get<int>();
  return e;
}

ordered_json episode_to_json(const Episode& e) {
  ordered_json j;
  j["id"] = e.id;
  j["times"] = e.times;
  j["values"] = e.values;
  j["vars"] = e.vars;
  j["age"] = e.age;
  j["sex"] = e.sex;
  j["label"] = e.label;
  return j;
}

std::vector<Episode> load_jsonl(const std::filesystem::path& path, int num_vars) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Episode> episodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Episode e = episode_from_json(json::parse(line));
      validate_episode(e, num_vars);
      episodes.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " +
                                  ex.what());
    }
  }
  return episodes;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Episode> episodes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : episodes) out << episode_to_json(e).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// --- manifest ---------------------------------------------------------------

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["format"] = "star-dataset/1";
  j["F"] = m.num_vars;
  j["L"] = m.max_len;
  j["value_means"] = m.value_means;
  j["value_stds"] = m.value_stds;
  j["age_mean"] = m.age_mean;
  j["age_std"] = m.age_std;
  ordered_json sizes = ordered_json::object();
  for (const char* name : {"train", "val", "test"}) {
    if (auto it = m.split_sizes.find(name); it != m.split_sizes.end()) sizes[name] = it->second;
  }
  j["split_sizes"] = sizes;
  j["generator"] = ordered_json::parse(m.generator.dump());
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.num_vars = require_key(j, "F").get<int>();
  m.max_len = require_key(j, "L").get<std::size_t>();
  m.value_means = require_key(j, "value_means").get<std::vector<double>>();
  m.value_stds = require_key(j, "value_stds").get<std::vector<double>>();
  m.age_mean = j.value("age_mean", 0.0);
  m.age_std = j.value("age_std", 1.0);
  m.split_sizes = require_key(j, "split_sizes").get<std::map<std::string, std::size_t>>();
  if (auto it = j.find("generator"); it != j.end()) m.generator = *it;
  if (m.num_vars <= 0) throw std::invalid_argument("manifest: F must be positive");
  if (m.max_len == 0) throw std::invalid_argument("manifest: L must be positive");
  if (m.value_means.size() != static_cast<std::size_t>(m.num_vars) ||
      m.value_stds.size() != static_cast<std::size_t>(m.num_vars)) {
    throw std::invalid_argument("manifest: value_means/value_stds must have F entries");
  }
  if (!(m.age_std > 0.0)) throw std::invalid_argument("manifest: age_std must be positive");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const std::exception& ex) {
    throw std::invalid_argument(path.string() + ": " + ex.what());
  }
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

const std::vector<Episode>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = load_manifest(dir / "manifest.json");
  for (const char* name : {"train", "val", "test"}) {
    auto episodes = load_jsonl(dir / (std::string(name) + ".jsonl"), d.manifest.num_vars);
    for (const auto& e : episodes) {
      if (e.length() > d.manifest.max_len) {
        throw std::invalid_argument(std::string(name) + ": episode " + std::to_string(e.id) +
                                    " exceeds max length " + std::to_string(d.manifest.max_len));
      }
    }
    if (auto it = d.manifest.split_sizes.find(name);
        it != d.manifest.split_sizes.end() && it->second != episodes.size()) {
      throw std::invalid_argument(std::string(name) + ": manifest lists " +
                                  std::to_string(it->second) + " episodes, file has " +
                                  std::to_string(episodes.size()));
    }
    std::string_view n(name);
    auto& target = n == "train" ? d.train : (n == "val" ? d.val : d.test);
    target = std::move(episodes);
  }
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  save_manifest(dir / "manifest.json", d.manifest);
  write_jsonl(dir / "train.jsonl", d.train);
  write_jsonl(dir / "val.jsonl", d.val);
  write_jsonl(dir / "test.jsonl", d.test);
}

}  // namespace star
