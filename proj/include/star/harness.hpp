#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/checkpoint.hpp"
#include "star/event_set.hpp"
#include "star/model.hpp"

namespace star {

// Keeps large transient buffers on the heap instead of fresh mmap pages;
// training allocates and frees many [B*S x S] blocks per step. No-op outside
// glibc.
void tune_allocator();

struct RunConfig {
  std::string schedule = "vt-vt";
  std::uint64_t seed = 1;
  std::size_t epochs_max = 50;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ff_dim = 128;
  double omega_init = default_omega_init();
  double time_unit = 48.0;  // hours per embedder time unit
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;

  void validate() const;
};

nlohmann::ordered_json run_config_to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

// Hash of everything that must be shared across an ablation grid: the config
// minus schedule and paths, plus the dataset manifest.
std::string config_hash(const RunConfig& config, const DatasetManifest& manifest);

struct RunReport {
  std::string schedule;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> val_auroc_history;
  std::vector<double> train_loss_history;
  double best_val_auroc = 0.0;
  double test_auroc = 0.0;
  double test_apr = 0.0;
  double wall_time_s = 0.0;
  std::string config_hash;

  bool operator==(const RunReport&) const = default;
};

nlohmann::ordered_json run_report_to_json(const RunReport& report, bool with_wall_time = true);
RunReport run_report_from_json(const nlohmann::json& j);
// Canonical text; doubles round-trip exactly.
std::string dump_report(const RunReport& report, bool with_wall_time = true);

// Patience counts epochs without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  // Returns true when training should stop after this epoch.
  bool observe(double metric);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t epochs() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct SplitMetrics {
  double auroc = 0.0;
  double apr = 0.0;
  double loss = 0.0;
  std::size_t episodes = 0;
};

// Scores for each episode in order; no parameter updates.
std::vector<double> score_episodes(const StarModel& model, const BiasSchedule& schedule,
                                   std::span<const Episode> episodes,
                                   std::size_t batch_size = 64);
SplitMetrics evaluate_model(const StarModel& model, const BiasSchedule& schedule,
                            std::span<const Episode> episodes, std::size_t batch_size = 64);

// Errors describe the mismatch between checkpoint and manifest.
void check_compatible(const ModelConfig& model, const DatasetManifest& manifest);
SplitMetrics evaluate(const Checkpoint& checkpoint, const Dataset& dataset,
                      std::string_view split);

struct TrainResult {
  RunReport report;
  Checkpoint checkpoint;
};

using ProgressFn = std::function<void(std::size_t epoch, double train_loss, double val_auroc)>;

// Trains on an in-memory dataset; writes nothing.
TrainResult train(const RunConfig& config, const Dataset& dataset,
                  const ProgressFn& progress = {});
// Loads config.data_dir, trains, and writes report.json and checkpoint.json
// under config.out_dir.
RunReport train_and_save(const RunConfig& config, const ProgressFn& progress = {});

struct AblationRow {
  std::string schedule;
  std::vector<RunReport> runs;
  double auroc_mean = 0.0;
  double auroc_std = 0.0;
  double apr_mean = 0.0;
  double apr_std = 0.0;
  std::optional<double> delta_auroc;  // vs nb-nb; absent without an nb-nb row
  std::optional<double> delta_apr;
  bool complete = false;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  bool complete = true;
  std::string error;
};

// Rows follow the canonical schedule order (all ten when `schedules` is
// empty); std is the n-1 sample deviation (0 for a single run).
AblationTable build_ablation_table(std::span<const RunReport> reports,
                                   std::span<const std::uint64_t> seeds,
                                   std::span<const std::string> schedules);

nlohmann::ordered_json ablation_to_json(const AblationTable& table);
std::string ablation_to_csv(const AblationTable& table);

struct AblationOptions {
  std::vector<std::string> schedules;  // empty = all ten
  std::size_t jobs = 1;
  ProgressFn progress;
};

// Runs every schedule x seed with only the schedule varying. Each run writes
// out_dir/runs/<schedule>/seed_<k>/; the table goes to out_dir/ablation.{json,csv}.
// A failed run stops the grid; finished runs are kept and the table is marked
// incomplete before the error is rethrown.
AblationTable run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                           const AblationOptions& options = {});

}  // namespace star
