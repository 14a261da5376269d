#include "star/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "star/metrics.hpp"
#include "star/optimizer.hpp"
#include "star/seeding.hpp"

namespace star {

namespace {

ModelConfig model_config_for(const RunConfig& c, const DatasetManifest& m) {
  ModelConfig mc;
  mc.num_vars = static_cast<std::size_t>(m.num_vars);
  mc.dim = c.dim;
  mc.heads = c.heads;
  mc.layers = c.layers;
  mc.ff_dim = c.ff_dim;
  mc.omega_init = c.omega_init;
  mc.time_unit = c.time_unit;
  mc.ages = AgeScaler{m.age_mean, m.age_std};
  mc.validate();
  return mc;
}

std::size_t longest(std::span<const Episode* const> episodes) {
  std::size_t len = 0;
  for (const auto* e : episodes) len = std::max(len, e->length());
  return len;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void RunConfig::validate() const {
  parse_schedule(schedule, layers);
  if (epochs_max == 0) throw std::invalid_argument("epochs_max must be positive");
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("D=" + std::to_string(dim) + " is not divisible by H=" +
                                std::to_string(heads));
  }
  if (ff_dim == 0 || layers == 0) throw std::invalid_argument("model dims must be positive");
  if (!std::isfinite(omega_init)) throw std::invalid_argument("omega_init must be finite");
  if (!(time_unit > 0.0) || !std::isfinite(time_unit)) {
    throw std::invalid_argument("time_unit_hours must be positive");
  }
}

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["schedule"] = c.schedule;
  j["seed"] = c.seed;
  j["epochs_max"] = c.epochs_max;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["D"] = c.dim;
  j["H"] = c.heads;
  j["L_enc"] = c.layers;
  j["D_ff"] = c.ff_dim;
  j["omega_init"] = c.omega_init;
  j["time_unit_hours"] = c.time_unit;
  j["data"] = c.data_dir.string();
  j["out"] = c.out_dir.string();
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "schedule") {
      c.schedule = value.get<std::string>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else if (key == "epochs_max") {
      c.epochs_max = value.get<std::size_t>();
    } else if (key == "patience") {
      c.patience = value.get<std::size_t>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<std::size_t>();
    } else if (key == "learning_rate") {
      c.learning_rate = value.get<double>();
    } else if (key == "D") {
      c.dim = value.get<std::size_t>();
    } else if (key == "H") {
      c.heads = value.get<std::size_t>();
    } else if (key == "L_enc") {
      c.layers = value.get<std::size_t>();
    } else if (key == "D_ff") {
      c.ff_dim = value.get<std::size_t>();
    } else if (key == "omega_init") {
      c.omega_init = value.get<double>();
    } else if (key == "time_unit_hours") {
      c.time_unit = value.get<double>();
    } else if (key == "data") {
      c.data_dir = value.get<std::string>();
    } else if (key == "out") {
      c.out_dir = value.get<std::string>();
    } else {
      throw std::invalid_argument("unknown run config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& config, const DatasetManifest& manifest) {
  auto j = run_config_to_json(config);
  j.erase("schedule");
  j.erase("data");
  j.erase("out");
  j["manifest"] = manifest_to_json(manifest);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

nlohmann::ordered_json run_report_to_json(const RunReport& r, bool with_wall_time) {
  nlohmann::ordered_json j;
  j["schedule"] = r.schedule;
  j["seed"] = r.seed;
  j["best_epoch"] = r.best_epoch;
  j["epochs_run"] = r.epochs_run;
  j["val_auroc_history"] = r.val_auroc_history;
  j["train_loss_history"] = r.train_loss_history;
  j["best_val_auroc"] = r.best_val_auroc;
  j["test_auroc"] = r.test_auroc;
  j["test_apr"] = r.test_apr;
  if (with_wall_time) j["wall_time_s"] = r.wall_time_s;
  j["config_hash"] = r.config_hash;
  return j;
}

RunReport run_report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.schedule = j.at("schedule").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.epochs_run = j.at("epochs_run").get<std::size_t>();
  r.val_auroc_history = j.at("val_auroc_history").get<std::vector<double>>();
  r.train_loss_history = j.at("train_loss_history").get<std::vector<double>>();
  r.best_val_auroc = j.at("best_val_auroc").get<double>();
  r.test_auroc = j.at("test_auroc").get<double>();
  r.test_apr = j.at("test_apr").get<double>();
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

std::string dump_report(const RunReport& report, bool with_wall_time) {
  return run_report_to_json(report, with_wall_time).dump(2) + "\n";
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopper::observe(double metric) {
  ++epoch_;
  improved_ = epoch_ == 1 || metric > best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

std::vector<double> score_episodes(const StarModel& model, const BiasSchedule& schedule,
                                   std::span<const Episode> episodes, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<double> scores;
  scores.reserve(episodes.size());
  std::vector<const Episode*> chunk;
  for (std::size_t start = 0; start < episodes.size(); start += batch_size) {
    chunk.clear();
    const std::size_t end = std::min(episodes.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&episodes[i]);
    const Batch batch = build_batch(chunk, longest(chunk));
    const Tensor logits = model.forward(batch, schedule);
    scores.insert(scores.end(), logits.data().begin(), logits.data().end());
  }
  return scores;
}

SplitMetrics evaluate_model(const StarModel& model, const BiasSchedule& schedule,
                            std::span<const Episode> episodes, std::size_t batch_size) {
  const auto scores = score_episodes(model, schedule, episodes, batch_size);
  std::vector<int> labels;
  labels.reserve(episodes.size());
  for (const auto& e : episodes) labels.push_back(e.label);
  SplitMetrics m;
  m.episodes = episodes.size();
  m.auroc = auroc(scores, labels);
  m.apr = average_precision(scores, labels);
  if (!scores.empty()) {
    NoGradGuard guard;
    m.loss = bce_loss(Tensor::from_data({scores.size()}, scores), labels).item();
  }
  return m;
}

void check_compatible(const ModelConfig& model, const DatasetManifest& manifest) {
  if (model.num_vars != static_cast<std::size_t>(manifest.num_vars)) {
    throw std::invalid_argument("model has F=" + std::to_string(model.num_vars) +
                                " but dataset manifest has F=" +
                                std::to_string(manifest.num_vars));
  }
}

SplitMetrics evaluate(const Checkpoint& checkpoint, const Dataset& dataset,
                      std::string_view split) {
  check_compatible(checkpoint.model.config, dataset.manifest);
  const auto schedule = parse_schedule(checkpoint.schedule, checkpoint.model.config.layers);
  return evaluate_model(checkpoint.model, schedule, dataset.split(std::string(split)));
}

TrainResult train(const RunConfig& config, const Dataset& dataset, const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const BiasSchedule schedule = parse_schedule(config.schedule, config.layers);
  // Fails before any training if the model cannot consume this dataset.
  const ModelConfig mc = model_config_for(config, dataset.manifest);
  check_compatible(mc, dataset.manifest);
  for (const auto* split : {&dataset.train, &dataset.val, &dataset.test}) {
    for (const auto& e : *split) validate_episode(e, dataset.manifest.num_vars);
  }
  if (dataset.train.empty()) throw std::invalid_argument("train split is empty");

  StarModel model = StarModel::init(mc, config.seed);
  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  Adam optimizer(params, AdamConfig{.learning_rate = config.learning_rate});
  Rng order_rng(derive_seed(config.seed, "data-order"));

  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);
  EarlyStopper stopper(config.patience);
  RunReport report;
  report.schedule = format_schedule(schedule);
  report.seed = config.seed;
  report.config_hash = config_hash(config, dataset.manifest);
  StarModel best = model.clone();
  std::vector<const Episode*> chunk;

  for (std::size_t epoch = 1; epoch <= config.epochs_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      chunk.clear();
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      for (std::size_t i = begin; i < end; ++i) chunk.push_back(&dataset.train[order[i]]);
      // Padding to the longest episode in the batch instead of the dataset
      // L changes nothing numerically: padded keys carry zero probability.
      const Batch batch = build_batch(chunk, longest(chunk));
      optimizer.zero_grad();
      Tensor loss = model.loss(batch, schedule);
      loss.backward();
      optimizer.step();
      loss_sum += loss.item() * static_cast<double>(chunk.size());
    }
    for (std::size_t l = 0; l < model.bias.layers(); ++l) {
      for (std::size_t h = 0; h < model.bias.heads(); ++h) {
        if (!(model.bias.tau(l, h) > model.bias.epsilon)) {
          throw std::runtime_error("temporal scale collapsed to epsilon");
        }
      }
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double val_auroc = evaluate_model(model, schedule, dataset.val).auroc;
    report.train_loss_history.push_back(train_loss);
    report.val_auroc_history.push_back(val_auroc);
    const bool stop = stopper.observe(val_auroc);
    if (stopper.improved()) best = model.clone();
    if (progress) progress(epoch, train_loss, val_auroc);
    if (stop) break;
  }

  report.epochs_run = stopper.epochs();
  report.best_epoch = stopper.best_epoch();
  report.best_val_auroc = stopper.best();
  const SplitMetrics test = evaluate_model(best, schedule, dataset.test);
  report.test_auroc = test.auroc;
  report.test_apr = test.apr;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  TrainResult result;
  result.report = report;
  result.checkpoint.model = std::move(best);
  result.checkpoint.schedule = report.schedule;
  result.checkpoint.max_len = dataset.manifest.max_len;
  std::ostringstream rng_state;
  rng_state << order_rng;
  result.checkpoint.rng_state = rng_state.str();
  result.checkpoint.run = nlohmann::json::parse(run_config_to_json(config).dump());
  result.checkpoint.run["best_epoch"] = report.best_epoch;
  result.checkpoint.run["config_hash"] = report.config_hash;
  return result;
}

RunReport train_and_save(const RunConfig& config, const ProgressFn& progress) {
  const Dataset dataset = load_dataset(config.data_dir);
  const TrainResult result = train(config, dataset, progress);
  std::filesystem::create_directories(config.out_dir);
  save_checkpoint(config.out_dir / "checkpoint.json", result.checkpoint);
  write_text(config.out_dir / "report.json", dump_report(result.report));
  return result.report;
}

AblationTable build_ablation_table(std::span<const RunReport> reports,
                                   std::span<const std::uint64_t> seeds,
                                   std::span<const std::string> schedules) {
  AblationTable table;
  table.seeds.assign(seeds.begin(), seeds.end());
  std::vector<std::string> wanted;
  for (const auto& s : schedules) wanted.push_back(format_schedule(parse_schedule(s)));
  if (wanted.empty()) wanted.assign(kAblationSchedules.begin(), kAblationSchedules.end());
  for (std::string_view view : kAblationSchedules) {
    const std::string name(view);
    if (std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    AblationRow row;
    row.schedule = name;
    for (auto seed : seeds) {
      for (const auto& r : reports) {
        if (r.schedule == name && r.seed == seed) {
          row.runs.push_back(r);
          break;
        }
      }
    }
    row.complete = row.runs.size() == seeds.size();
    const auto n = static_cast<double>(row.runs.size());
    if (!row.runs.empty()) {
      for (const auto& r : row.runs) {
        row.auroc_mean += r.test_auroc;
        row.apr_mean += r.test_apr;
      }
      row.auroc_mean /= n;
      row.apr_mean /= n;
      if (row.runs.size() > 1) {
        double sa = 0.0;
        double sp = 0.0;
        for (const auto& r : row.runs) {
          sa += (r.test_auroc - row.auroc_mean) * (r.test_auroc - row.auroc_mean);
          sp += (r.test_apr - row.apr_mean) * (r.test_apr - row.apr_mean);
        }
        row.auroc_std = std::sqrt(sa / (n - 1.0));
        row.apr_std = std::sqrt(sp / (n - 1.0));
      }
    }
    table.complete = table.complete && row.complete;
    table.rows.push_back(std::move(row));
  }
  const auto base = std::find_if(table.rows.begin(), table.rows.end(),
                                 [](const AblationRow& r) { return r.schedule == "nb-nb"; });
  if (base != table.rows.end() && !base->runs.empty()) {
    const double auroc_ref = base->auroc_mean;
    const double apr_ref = base->apr_mean;
    for (auto& row : table.rows) {
      if (row.runs.empty()) continue;
      row.delta_auroc = row.auroc_mean - auroc_ref;
      row.delta_apr = row.apr_mean - apr_ref;
    }
  }
  return table;
}

nlohmann::ordered_json ablation_to_json(const AblationTable& table) {
  nlohmann::ordered_json j;
  j["complete"] = table.complete;
  if (!table.error.empty()) j["error"] = table.error;
  j["seeds"] = table.seeds;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : table.rows) {
    nlohmann::ordered_json r;
    r["schedule"] = row.schedule;
    r["runs"] = row.runs.size();
    r["complete"] = row.complete;
    r["auroc_mean"] = row.auroc_mean;
    r["auroc_std"] = row.auroc_std;
    r["apr_mean"] = row.apr_mean;
    r["apr_std"] = row.apr_std;
    r["delta_auroc"] = row.delta_auroc ? nlohmann::ordered_json(*row.delta_auroc) : nlohmann::ordered_json();
    r["delta_apr"] = row.delta_apr ? nlohmann::ordered_json(*row.delta_apr) : nlohmann::ordered_json();
    auto reports = nlohmann::ordered_json::array();
    for (const auto& run : row.runs) reports.push_back(run_report_to_json(run));
    r["reports"] = std::move(reports);
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string ablation_to_csv(const AblationTable& table) {
  std::string out =
      "schedule,runs,auroc_mean,auroc_std,apr_mean,apr_std,delta_auroc,delta_apr,complete\n";
  for (const auto& row : table.rows) {
    out += row.schedule + "," + std::to_string(row.runs.size()) + "," +
           format_double(row.auroc_mean) + "," + format_double(row.auroc_std) + "," +
           format_double(row.apr_mean) + "," + format_double(row.apr_std) + "," +
           (row.delta_auroc ? format_double(*row.delta_auroc) : "") + "," +
           (row.delta_apr ? format_double(*row.delta_apr) : "") + "," +
           (row.complete ? "true" : "false") + "\n";
  }
  return out;
}

AblationTable run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                           const AblationOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  std::vector<std::string> schedules = options.schedules;
  if (schedules.empty()) schedules.assign(std::begin(kAblationSchedules), std::end(kAblationSchedules));
  for (auto& s : schedules) s = format_schedule(parse_schedule(s, base.layers));
  base.validate();
  const Dataset dataset = load_dataset(base.data_dir);

  struct Job {
    RunConfig config;
    std::filesystem::path dir;
  };
  std::vector<Job> jobs;
  for (std::string_view view : kAblationSchedules) {
    const std::string name(view);
    if (std::find(schedules.begin(), schedules.end(), name) == schedules.end()) continue;
    for (auto seed : seeds) {
      Job job{base, base.out_dir / "runs" / name / ("seed_" + std::to_string(seed))};
      job.config.schedule = name;
      job.config.seed = seed;
      job.config.out_dir = job.dir;
      jobs.push_back(std::move(job));
    }
  }

  std::vector<std::optional<RunReport>> done(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string error;
  auto worker = [&] {
    for (;;) {
      if (failed) return;
      const std::size_t i = next++;
      if (i >= jobs.size()) return;
      try {
        TrainResult result = train(jobs[i].config, dataset);
        std::filesystem::create_directories(jobs[i].dir);
        save_checkpoint(jobs[i].dir / "checkpoint.json", result.checkpoint);
        write_text(jobs[i].dir / "report.json", dump_report(result.report));
        if (options.progress) {
          options.progress(i + 1, result.report.test_auroc, result.report.best_val_auroc);
        }
        done[i] = std::move(result.report);
      } catch (const std::exception& ex) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) {
          error = jobs[i].config.schedule + " seed " + std::to_string(jobs[i].config.seed) +
                  ": " + ex.what();
        }
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<RunReport> reports;
  for (auto& r : done) {
    if (r) reports.push_back(*r);
  }
  AblationTable table = build_ablation_table(reports, seeds, schedules);
  if (failed) {
    table.complete = false;
    table.error = error;
  }
  write_text(base.out_dir / "ablation.json", ablation_to_json(table).dump(2) + "\n");
  write_text(base.out_dir / "ablation.csv", ablation_to_csv(table));
  if (failed) throw std::runtime_error("ablation incomplete: " + error);
  return table;
}

}  // namespace star
