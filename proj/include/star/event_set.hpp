#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/tensor.hpp"

namespace star {

// One subject's irregular event sequence. Event i is the triplet
// (times[i], values[i], vars[i]); times are hours from episode start and
// need not be sorted.
struct Episode {
  long id = -1;
  std::vector<double> times;
  std::vector<double> values;
  std::vector<int> vars;
  double age = 0.0;
  int sex = 0;
  int label = 0;

  std::size_t length() const { return times.size(); }
  bool operator==(const Episode&) const = default;
};

// Throws std::invalid_argument if lengths differ, the episode is empty, a
// variable ID is outside [0, num_vars), or sex/label are not 0/1.
void validate_episode(const Episode& episode, int num_vars);

// Largest observed time; 0 for an episode without events.
double reference_time(const Episode& episode);

inline constexpr int kSpecialVar = -1;

// Padded tensorization of a list of episodes. Token layout per episode is
// [CLS, demo, event_1 .. event_L], so seq_len = max_len + 2.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;  // L
  std::size_t seq_len = 0;  // S = L + 2
  Tensor events;            // [B x L x 3] (t, v, s); padding is (0, 0, -1)
  std::vector<int> input_lengths;
  Tensor demo;              // [B x 2] raw (age, sex)
  std::vector<int> labels;
  Tensor t_tilde;           // [B x S]
  std::vector<int> s_tilde; // B*S, row-major
  Tensor pad_mask;          // [B x S], 0 valid, kernels::kMaskedLogit padded

  std::size_t valid_tokens(std::size_t b) const {
    return static_cast<std::size_t>(input_lengths[b]) + 2;
  }
};

struct TokenMetadata {
  std::vector<double> t_tilde;  // B*S
  std::vector<int> s_tilde;     // B*S
};

// Packs episodes into a batch of width max_len. Throws "empty batch" or
// "episode exceeds max length"; episodes longer than max_len are never
// truncated.
Batch build_batch(std::span<const Episode* const> episodes, std::size_t max_len);
Batch build_batch(std::span<const Episode> episodes, std::size_t max_len);

// Per-token (t~, s~) recomputed from the packed triplets: special tokens get
// (t_ref, -1), events their own (t, s), padding (0, -1).
TokenMetadata token_metadata(const Batch& batch);

// Additive key padding mask, one row of S entries per episode.
Tensor padding_mask(std::span<const int> input_lengths, std::size_t seq_len);

// --- JSON Lines episodes ----------------------------------------------------

Episode episode_from_json(const nlohmann::json& j);
nlohmann::ordered_json episode_to_json(const Episode& episode);

// Parses one episode per line. Errors carry the 1-based line number.
std::vector<Episode> load_jsonl(const std::filesystem::path& path, int num_vars);
void write_jsonl(const std::filesystem::path& path, std::span<const Episode> episodes);

// --- dataset manifest -------------------------------------------------------

struct DatasetManifest {
  int num_vars = 0;          // F
  std::size_t max_len = 0;   // L
  std::vector<double> value_means;
  std::vector<double> value_stds;
  double age_mean = 0.0;
  double age_std = 1.0;
  std::map<std::string, std::size_t> split_sizes;
  nlohmann::json generator;  // generator config, null for external data
};

nlohmann::ordered_json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Episode> train;
  std::vector<Episode> val;
  std::vector<Episode> test;

  const std::vector<Episode>& split(const std::string& name) const;
};

// Reads <dir>/manifest.json and the three <split>.jsonl files, checking each
// episode against the manifest (F, L) and the recorded split sizes.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace star
