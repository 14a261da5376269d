// Command-line front end: gen, train, eval, ablate.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "star/checkpoint.hpp"
#include "star/harness.hpp"
#include "star/synth.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error(path.string() + ": " + ex.what());
  }
}

// Relative output paths land under $STAR_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("STAR_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto value = std::stoull(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad seed '" + item + "'");
    seeds.push_back(value);
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds needs at least one seed");
  return seeds;
}

struct TrainFlags {
  std::string config;
  std::string schedule;
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  std::size_t epochs = 0;
  std::size_t patience = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  double omega_init = 0.0;
  double time_unit = 0.0;
};

void add_run_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "RunConfig JSON file");
  cmd->add_option("--data", f.data, "Dataset directory");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--epochs", f.epochs, "Maximum epochs");
  cmd->add_option("--patience", f.patience, "Early-stopping patience");
  cmd->add_option("--batch-size", f.batch_size, "Minibatch size");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--omega-init", f.omega_init, "Initial log timescale");
  cmd->add_option("--time-unit", f.time_unit, "Hours per embedder time unit");
}

// Flags override values from --config.
star::RunConfig resolve_run(const CLI::App* cmd, const TrainFlags& f) {
  star::RunConfig c;
  if (!f.config.empty()) c = star::run_config_from_json(read_json(f.config));
  if (cmd->count("--schedule")) c.schedule = f.schedule;
  if (cmd->count("--seed")) c.seed = f.seed;
  if (cmd->count("--data")) c.data_dir = f.data;
  if (cmd->count("--out")) c.out_dir = f.out;
  if (cmd->count("--epochs")) c.epochs_max = f.epochs;
  if (cmd->count("--patience")) c.patience = f.patience;
  if (cmd->count("--batch-size")) c.batch_size = f.batch_size;
  if (cmd->count("--lr")) c.learning_rate = f.lr;
  if (cmd->count("--omega-init")) c.omega_init = f.omega_init;
  if (cmd->count("--time-unit")) c.time_unit = f.time_unit;
  if (c.data_dir.empty()) throw std::invalid_argument("no dataset: pass --data or set \"data\"");
  if (c.out_dir.empty()) throw std::invalid_argument("no output dir: pass --out or set \"out\"");
  c.out_dir = output_path(c.out_dir);
  c.validate();
  return c;
}

void print_metrics(const std::string& split, const star::SplitMetrics& m) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["episodes"] = m.episodes;
  j["auroc"] = m.auroc;
  j["apr"] = m.apr;
  j["loss"] = m.loss;
  std::cout << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set encoder with learnable attention biases for irregular event series"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  std::string gen_config;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "SynthConfig JSON file");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the generator seed");

  auto* train = app.add_subcommand("train", "Train one model");
  TrainFlags train_flags;
  add_run_flags(train, train_flags);
  train->add_option("--schedule", train_flags.schedule, "Bias schedule, e.g. vt-vt");
  train->add_option("--seed", train_flags.seed, "Master seed");
  bool quiet = false;
  train->add_flag("-q,--quiet", quiet, "No per-epoch progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ckpt_path;
  std::string eval_split = "test";
  std::string eval_data;
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--data", eval_data, "Dataset directory (default: the one it was trained on)");

  auto* ablate = app.add_subcommand("ablate", "Run the schedule x seed grid");
  TrainFlags ablate_flags;
  add_run_flags(ablate, ablate_flags);
  std::string seeds_text;
  std::string schedules_text;
  std::size_t jobs = 1;
  ablate->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  ablate->add_option("--schedules", schedules_text, "Comma-separated subset (default: all ten)");
  ablate->add_option("--jobs", jobs, "Runs in parallel")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  star::tune_allocator();

  try {
    if (gen->parsed()) {
      star::SynthConfig config;
      if (!gen_config.empty()) config = star::synth_config_from_json(read_json(gen_config));
      if (gen->count("--seed")) config.seed = gen_seed;
      const fs::path out = output_path(gen_out);
      const auto dataset = star::generate_dataset(config);
      star::save_dataset(out, dataset);
      std::cout << "wrote " << out.string() << " (train " << dataset.train.size() << ", val "
                << dataset.val.size() << ", test " << dataset.test.size() << ")\n";
    } else if (train->parsed()) {
      const auto config = resolve_run(train, train_flags);
      star::ProgressFn progress;
      if (!quiet) {
        progress = [](std::size_t epoch, double loss, double val) {
          std::cerr << "epoch " << epoch << "  train_loss " << loss << "  val_auroc " << val
                    << '\n';
        };
      }
      const auto report = star::train_and_save(config, progress);
      std::cout << star::dump_report(report);
    } else if (eval->parsed()) {
      const auto ckpt = star::load_checkpoint(ckpt_path);
      std::string data = eval_data;
      if (data.empty()) data = ckpt.run.value("data", "");
      if (data.empty()) throw std::invalid_argument("checkpoint records no dataset; pass --data");
      const auto dataset = star::load_dataset(data);
      print_metrics(eval_split, star::evaluate(ckpt, dataset, eval_split));
    } else if (ablate->parsed()) {
      const auto config = resolve_run(ablate, ablate_flags);
      star::AblationOptions options;
      options.jobs = jobs;
      std::stringstream ss(schedules_text);
      for (std::string s; std::getline(ss, s, ',');) {
        if (!s.empty()) options.schedules.push_back(s);
      }
      options.progress = [](std::size_t run, double test_auroc, double val_auroc) {
        std::cerr << "run " << run << " done  val_auroc " << val_auroc << "  test_auroc "
                  << test_auroc << '\n';
      };
      const auto seeds = parse_seeds(seeds_text);
      const auto table = star::run_ablation(config, seeds, options);
      std::cout << star::ablation_to_csv(table);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
