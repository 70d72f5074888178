#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lockseer/models.hpp"
#include "lockseer/prep.hpp"

namespace lockseer::train {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.001;  // constant
  double weight_decay = 0.004;
  std::vector<uint64_t> seeds;   // empty: derive n_seeds from master_seed
  int n_seeds = 10;
  uint64_t master_seed = 0;

  void validate() const;
  std::vector<uint64_t> resolve_seeds() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool is_best = false;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;            // earliest epoch with the lowest val loss
  double best_val_loss = 0.0;
};

// One shuffle per epoch; final partial batch kept.
std::vector<std::vector<size_t>> make_batches(size_t n_examples, int batch_size, Rng& epoch_rng);

struct FitResult {
  models::ModelParams params;  // snapshot at best_epoch
  TrainHistory history;
};

// AdamW on horizon-1 cross-entropy; validation loss per epoch with dropout
// disabled; returns the best-epoch snapshot. Naive returns immediately with
// an empty history.
FitResult fit(models::ModelConfig model_config, const prep::WindowedDataset& dataset,
              const TrainConfig& train_config, uint64_t seed);

// Mean cross-entropy of the next-token head over a whole split (no dropout).
double evaluate_loss(const models::Model& model, const std::vector<prep::Example>& examples,
                     int batch_size = 256);

struct RunResult {
  uint64_t seed = 0;
  models::ModelParams params;
  TrainHistory history;
};

// One independent fit per seed, ordered by the seed list. Fits run in
// parallel up to LOCKSEER_THREADS workers.
std::vector<RunResult> run_repetitions(const models::ModelConfig& model_config,
                                       const prep::WindowedDataset& dataset,
                                       const TrainConfig& train_config);

enum class Regime { Global, Local };
std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);

struct ScopeResult {
  std::string scope;  // "global" or "local:<table>"
  std::string table;  // empty for global
  prep::WindowedDataset dataset;
  std::vector<RunResult> runs;
};

// Global: one model over the whole task corpus. Local: one model per table,
// trained and evaluated on that table's events only; page-level scopes
// exclude the warehouse table; tables with fewer than 10 events are skipped
// with a warning.
std::vector<ScopeResult> train_regime(Regime regime, prep::Task task,
                                      const std::vector<LockEvent>& sorted_events,
                                      const models::ModelConfig& model_config,
                                      const TrainConfig& train_config,
                                      const prep::DatasetOptions& options = {},
                                      std::vector<std::string>* warnings = nullptr);

// Worker-pool width: LOCKSEER_THREADS when set, hardware concurrency otherwise.
size_t worker_threads();

}  // namespace lockseer::train
