#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lockseer/experiment.hpp"

namespace {

using namespace lockseer;

int run_app(int argc, char** argv) {
  CLI::App app{"lockseer: lock-trace ingestion, synthetic TPC-C workloads, and next-lock "
               "sequence prediction"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic lock-event stream");
  std::string sim_config_path, sim_out = ".";
  std::optional<uint64_t> sim_seed;
  std::optional<uint64_t> sim_transactions;
  bool sim_raw = false;
  simulate->add_option("--config", sim_config_path, "experiment config with a source.simulate section");
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--seed", sim_seed, "workload seed (overrides config)");
  simulate->add_option("--transactions", sim_transactions, "transaction count (overrides config)");
  simulate->add_flag("--raw", sim_raw, "also emit the raw-trace form (events.rawtrace)");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "parse, filter, and sort a lock trace");
  std::string ingest_input, ingest_out = ".";
  bool ingest_raw = false;
  ingest_cmd->add_option("input", ingest_input, "trace file (.lockevents, or raw with --raw)")
      ->required();
  ingest_cmd->add_option("--out", ingest_out, "output directory")->required();
  ingest_cmd->add_flag("--raw", ingest_raw, "input is a raw db2-style trace");

  // prep
  auto* prep_cmd = app.add_subcommand("prep", "build a windowed dataset from canonical events");
  std::string prep_input, prep_out = ".", prep_task = "table", prep_table;
  prep_cmd->add_option("input", prep_input, "canonical .lockevents file")->required();
  prep_cmd->add_option("--out", prep_out, "output directory")->required();
  prep_cmd->add_option("--task", prep_task, "table | page_global | page_local");
  prep_cmd->add_option("--table", prep_table, "table for the page_local task");

  // run
  auto* run_cmd = app.add_subcommand("run", "execute a full experiment from a config file");
  std::string run_config_path;
  experiment::Overrides overrides;
  std::string run_out, run_task, run_regime;
  std::vector<std::string> run_models;
  std::optional<uint64_t> run_seed;
  std::optional<int> run_horizons, run_drift_windows;
  run_cmd->add_option("--config", run_config_path, "experiment config (JSON)")->required();
  run_cmd->add_option("--out", run_out, "output directory (overrides config)");
  run_cmd->add_option("--seed", run_seed, "master seed (overrides config)");
  run_cmd->add_option("--task", run_task, "table | page_global | page_local");
  run_cmd->add_option("--regime", run_regime, "global | local");
  run_cmd->add_option("--models", run_models, "model kinds to run")->delimiter(',');
  run_cmd->add_option("--horizons", run_horizons, "max evaluation horizon (1..4)");
  run_cmd->add_option("--drift-windows", run_drift_windows, "time windows for drift analysis");

  // report
  auto* report_cmd = app.add_subcommand("report", "render tables and plot data for a finished run");
  std::string report_dir;
  report_cmd->add_option("run_dir", report_dir, "directory produced by `run`")->required();

  CLI11_PARSE(app, argc, argv);

  if (simulate->parsed()) {
    simgen::WorkloadConfig workload;
    if (!sim_config_path.empty()) {
      const auto cfg = experiment::load_experiment_config(sim_config_path, {});
      if (!cfg.simulate.has_value())
        throw ConfigError("config has no source.simulate section");
      workload = *cfg.simulate;
    }
    if (sim_seed) workload.seed = *sim_seed;
    if (sim_transactions) workload.transactions = *sim_transactions;
    const auto result = experiment::cmd_simulate(workload, sim_out, sim_raw);
    std::cout << "events: " << result.event_count << "\n"
              << "wrote: " << result.events_path << "\n"
              << "sha256: " << result.sha256 << "\n";
    return 0;
  }

  if (ingest_cmd->parsed()) {
    experiment::IngestOptions options;
    options.raw = ingest_raw;
    const auto result = experiment::cmd_ingest(ingest_input, ingest_out, options);
    std::cout << result.summary.to_text() << "emitted=" << result.emitted << "\n"
              << "wrote: " << result.events_path << "\n";
    std::cout << result.distribution.to_text();
    return 0;
  }

  if (prep_cmd->parsed()) {
    const auto task = prep::parse_task(prep_task);
    const auto result = experiment::cmd_prep(prep_input, task, prep_table, prep_out);
    std::cout << "train=" << result.train_examples << " val=" << result.val_examples
              << " test=" << result.test_examples << " vocab=" << result.vocab_size << "\n"
              << "wrote: " << result.dataset_path << "\n";
    return 0;
  }

  if (run_cmd->parsed()) {
    if (!run_out.empty()) overrides.out_dir = run_out;
    if (run_seed) overrides.seed = run_seed;
    if (!run_task.empty()) overrides.task = run_task;
    if (!run_regime.empty()) overrides.regime = run_regime;
    if (!run_models.empty()) overrides.model_kinds = run_models;
    if (run_horizons) overrides.horizons = run_horizons;
    if (run_drift_windows) overrides.drift_windows = run_drift_windows;
    const auto cfg = experiment::load_experiment_config(run_config_path, overrides);
    experiment::cmd_run(cfg);
    std::cout << "run complete: " << cfg.out_dir << "\n";
    return 0;
  }

  if (report_cmd->parsed()) {
    experiment::cmd_report(report_dir);
    std::cout << "report written under " << report_dir << "/report\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_app(argc, argv);
  } catch (const lockseer::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const lockseer::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
