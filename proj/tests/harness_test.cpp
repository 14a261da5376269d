#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <gtest/gtest.h>

#include "star/harness.hpp"
#include "star/synth.hpp"

using namespace star;

namespace {

Dataset tiny_dataset() {
  SynthConfig c;
  c.n_train = 24;
  c.n_val = 16;
  c.n_test = 16;
  c.rate_per_var = 0.1;
  c.max_len = 64;
  c.threshold = -0.5;
  c.trigger_gap_hours = 2.0;
  c.seed = 99;
  return generate_dataset(c);
}

RunConfig tiny_run() {
  RunConfig r;
  r.schedule = "vt-nb";
  r.seed = 3;
  r.epochs_max = 3;
  r.patience = 2;
  r.batch_size = 8;
  r.dim = 8;
  r.heads = 2;
  r.layers = 2;
  r.ff_dim = 8;
  return r;
}

std::string message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& ex) {
    return ex.what();
  }
  return "";
}

}  // namespace

TEST(EarlyStopper, WorseningMetricStopsAfterPatience) {
  EarlyStopper stop(1);
  EXPECT_FALSE(stop.observe(0.7));
  EXPECT_TRUE(stop.improved());
  EXPECT_TRUE(stop.observe(0.6));
  EXPECT_EQ(stop.best_epoch(), 1u);
  EXPECT_EQ(stop.epochs(), 2u);
  EXPECT_EQ(stop.best(), 0.7);
}

TEST(EarlyStopper, TiesDoNotCountAsImprovement) {
  EarlyStopper stop(3);
  EXPECT_FALSE(stop.observe(0.5));
  EXPECT_FALSE(stop.observe(0.6));
  EXPECT_FALSE(stop.observe(0.6));
  EXPECT_FALSE(stop.improved());
  EXPECT_FALSE(stop.observe(0.55));
  EXPECT_TRUE(stop.observe(0.6));
  EXPECT_EQ(stop.best_epoch(), 2u);
}

TEST(RunConfig, JsonAndValidation) {
  auto c = tiny_run();
  c.data_dir = "data/x";
  c.out_dir = "runs/y";
  auto back = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(back).dump(), run_config_to_json(c).dump());
  EXPECT_THROW(run_config_from_json({{"epochs", 3}}), std::invalid_argument);

  c.patience = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_run();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_run();
  c.schedule = "xx-nb";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunConfig, HashIgnoresScheduleAndPaths) {
  DatasetManifest m;
  m.num_vars = 3;
  m.value_means = {0, 0, 0};
  m.value_stds = {1, 1, 1};
  auto a = tiny_run();
  auto b = a;
  b.schedule = "nb-nb";
  b.data_dir = "elsewhere";
  b.out_dir = "other";
  EXPECT_EQ(config_hash(a, m), config_hash(b, m));
  b.learning_rate = 2e-3;
  EXPECT_NE(config_hash(a, m), config_hash(b, m));
  auto m2 = m;
  m2.age_mean = 1.0;
  EXPECT_NE(config_hash(a, m), config_hash(a, m2));
}

TEST(RunReport, JsonRoundTrip) {
  RunReport r;
  r.schedule = "tb-vb";
  r.seed = 7;
  r.best_epoch = 2;
  r.epochs_run = 4;
  r.val_auroc_history = {0.5, 0.1 + 0.2, 0.6, 0.55};
  r.train_loss_history = {0.7, 0.69, 0.6, 0.5};
  r.best_val_auroc = 0.6;
  r.test_auroc = 0.61234567890123456;
  r.test_apr = 0.5;
  r.wall_time_s = 12.5;
  r.config_hash = "0123456789abcdef";
  EXPECT_EQ(run_report_from_json(run_report_to_json(r)), r);
  auto stripped = run_report_from_json(run_report_to_json(r, false));
  EXPECT_EQ(stripped.wall_time_s, 0.0);
  EXPECT_EQ(dump_report(r, false), dump_report(stripped, false));
  EXPECT_EQ(dump_report(r).back(), '\n');
}

TEST(Train, DeterministicAndEvaluatesBestCheckpoint) {
  auto data = tiny_dataset();
  auto config = tiny_run();
  std::size_t calls = 0;
  auto first = train(config, data, [&](std::size_t, double, double) { ++calls; });
  auto second = train(config, data);
  EXPECT_EQ(calls, first.report.epochs_run);
  EXPECT_EQ(dump_report(first.report, false), dump_report(second.report, false));
  EXPECT_EQ(checkpoint_to_json(first.checkpoint).dump(),
            checkpoint_to_json(second.checkpoint).dump());

  const auto& r = first.report;
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_LE(r.epochs_run, config.epochs_max);
  EXPECT_EQ(r.val_auroc_history.size(), r.epochs_run);
  EXPECT_EQ(r.best_val_auroc, r.val_auroc_history[r.best_epoch - 1]);
  EXPECT_EQ(r.config_hash, config_hash(config, data.manifest));

  // The reported test metrics come from the kept checkpoint.
  auto test = evaluate(first.checkpoint, data, "test");
  EXPECT_EQ(test.auroc, r.test_auroc);
  EXPECT_EQ(test.apr, r.test_apr);
  auto again = evaluate(first.checkpoint, data, "test");
  EXPECT_EQ(again.auroc, test.auroc);
  EXPECT_EQ(evaluate(first.checkpoint, data, "val").auroc, r.best_val_auroc);

  config.seed = 4;
  EXPECT_NE(dump_report(train(config, data).report, false), dump_report(r, false));
}

TEST(Train, ErrorsAreReported) {
  auto data = tiny_dataset();
  auto result = train(tiny_run(), data);

  auto empty = data;
  empty.test.clear();
  EXPECT_EQ(message([&] { evaluate(result.checkpoint, empty, "test"); }), "AUROC undefined");

  auto wider = data;
  wider.manifest.num_vars = 12;
  EXPECT_NE(message([&] { evaluate(result.checkpoint, wider, "test"); }).find("F"),
            std::string::npos);

  auto bad = data;
  bad.train[0].vars[0] = 10;
  EXPECT_THROW(train(tiny_run(), bad), std::invalid_argument);
  EXPECT_THROW(evaluate(result.checkpoint, data, "holdout"), std::exception);
}

TEST(Ablation, TableRowsMeansAndDeltas) {
  std::vector<RunReport> reports;
  const std::vector<std::uint64_t> seeds = {1, 2};
  const std::vector<std::string> schedules = {"vt-vt", "nb-nb"};
  for (const auto& s : schedules) {
    for (auto seed : seeds) {
      RunReport r;
      r.schedule = s;
      r.seed = seed;
      r.test_auroc = (s == "nb-nb" ? 0.6 : 0.7) + 0.02 * static_cast<double>(seed);
      r.test_apr = 0.5;
      reports.push_back(r);
    }
  }
  auto table = build_ablation_table(reports, seeds, schedules);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].schedule, "nb-nb");  // canonical order
  EXPECT_EQ(table.rows[1].schedule, "vt-vt");
  EXPECT_TRUE(table.complete);
  EXPECT_NEAR(table.rows[0].auroc_mean, 0.63, 1e-15);
  EXPECT_NEAR(table.rows[0].auroc_std, std::sqrt(2.0 * 0.01 * 0.01), 1e-15);
  EXPECT_EQ(*table.rows[0].delta_auroc, 0.0);
  EXPECT_NEAR(*table.rows[1].delta_auroc, 0.1, 1e-12);
  EXPECT_EQ(*table.rows[1].delta_apr, 0.0);

  const auto csv = ablation_to_csv(table);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "schedule,runs,auroc_mean,auroc_std,apr_mean,apr_std,delta_auroc,delta_apr,complete");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(ablation_to_json(table)["rows"].size(), 2u);

  reports.pop_back();
  auto partial = build_ablation_table(reports, seeds, schedules);
  EXPECT_FALSE(partial.complete);
  EXPECT_FALSE(partial.rows[0].complete);  // nb-nb lost its second seed
  EXPECT_TRUE(partial.rows[1].complete);

  auto all = build_ablation_table({}, seeds, {});
  EXPECT_EQ(all.rows.size(), 10u);
}

TEST(Ablation, RunsGridAndWritesFiles) {
  auto dir = std::filesystem::temp_directory_path() / "star_ablation_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir / "data", tiny_dataset());
  auto base = tiny_run();
  base.epochs_max = 1;
  base.data_dir = dir / "data";
  base.out_dir = dir / "out";
  const std::vector<std::uint64_t> seeds = {5, 6};
  AblationOptions options;
  options.schedules = {"nb-nb", "tb-tb"};
  options.jobs = 2;
  auto table = run_ablation(base, seeds, options);
  EXPECT_TRUE(table.complete);
  ASSERT_EQ(table.rows.size(), 2u);
  for (const auto& row : table.rows) EXPECT_EQ(row.runs.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "ablation.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "ablation.csv"));
  const auto run_dir = dir / "out" / "runs" / "tb-tb" / "seed_6";
  EXPECT_TRUE(std::filesystem::exists(run_dir / "checkpoint.json"));
  std::ifstream in(run_dir / "report.json");
  auto report = run_report_from_json(nlohmann::json::parse(in));
  EXPECT_EQ(report.schedule, "tb-tb");
  EXPECT_EQ(report.seed, 6u);
  // Parallel runs reproduce the serial ones.
  auto serial_config = base;
  serial_config.schedule = "tb-tb";
  serial_config.seed = 6;
  auto serial = train(serial_config, load_dataset(base.data_dir));
  EXPECT_EQ(dump_report(serial.report, false), dump_report(report, false));
}
