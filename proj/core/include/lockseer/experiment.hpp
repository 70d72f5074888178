#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lockseer/evalkit.hpp"
#include "lockseer/ingest.hpp"
#include "lockseer/models.hpp"
#include "lockseer/prep.hpp"
#include "lockseer/simgen.hpp"
#include "lockseer/train.hpp"

namespace lockseer::experiment {

std::string sha256_hex(const std::string& bytes);

// Flag-level overrides; unset fields fall back to the config file, then to
// defaults. Precedence: flag > config key > default.
struct Overrides {
  std::optional<std::string> out_dir;
  std::optional<uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::string> regime;
  std::optional<std::vector<std::string>> model_kinds;
  std::optional<int> horizons;
  std::optional<int> drift_windows;
};

struct ExperimentConfig {
  // Exactly one input source.
  std::optional<simgen::WorkloadConfig> simulate;
  std::string canonical_path;
  std::string raw_path;

  prep::Task task = prep::Task::Table;
  train::Regime regime = train::Regime::Global;
  std::vector<models::ModelKind> model_kinds = {models::ModelKind::Transformer,
                                                models::ModelKind::Lstm, models::ModelKind::Naive};
  models::ModelConfig model;  // dims; kind/vocab filled per run
  train::TrainConfig train;
  int horizons = 4;
  int drift_windows = 50;
  bool weighted_metrics = false;
  std::string out_dir;
  uint64_t master_seed = 0;

  void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path, const Overrides& overrides);
ExperimentConfig parse_experiment_config(const std::string& json_text, const Overrides& overrides);
std::string resolved_config_json(const ExperimentConfig& config);

// Writes <out_dir>/events.lockevents and a manifest with the content hash.
struct SimulateResult {
  std::string events_path;
  std::string manifest_path;
  uint64_t event_count = 0;
  std::string sha256;
};
SimulateResult cmd_simulate(const simgen::WorkloadConfig& config, const std::string& out_dir,
                            bool also_raw = false);

struct IngestOptions {
  bool raw = false;
  std::set<LockObjectType> keep_objs = {LockObjectType::TABLE, LockObjectType::PAGE};
  std::set<std::string> excluded_schemas = {"SYSIBM"};
  double max_malformed_fraction = 0.01;
};

struct IngestResult {
  std::string events_path;
  std::string distribution_path;
  DistributionReport distribution;  // computed before filtering
  ingest::ParseSummary summary;
  uint64_t emitted = 0;
};
IngestResult cmd_ingest(const std::string& input_path, const std::string& out_dir,
                        const IngestOptions& options);

struct PrepResult {
  std::string dataset_path;
  size_t train_examples = 0;
  size_t val_examples = 0;
  size_t test_examples = 0;
  size_t vocab_size = 0;
};
PrepResult cmd_prep(const std::string& events_path, prep::Task task,
                    const std::string& local_table, const std::string& out_dir,
                    const prep::DatasetOptions& options = {});

// Full pipeline: prep -> train_regime -> multi_horizon_eval -> temporal_drift
// -> summarize_runs; all artifacts under out_dir.
void cmd_run(const ExperimentConfig& config);

// Renders human-readable tables and plot-ready files under <run_dir>/report.
void cmd_report(const std::string& run_dir);

}  // namespace lockseer::experiment
