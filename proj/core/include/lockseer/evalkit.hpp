#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "lockseer/models.hpp"
#include "lockseer/prep.hpp"

namespace lockseer::evalkit {

double accuracy(const std::vector<int32_t>& predictions, const std::vector<int32_t>& targets);

struct ClassCounts {
  uint64_t tp = 0;
  uint64_t fp = 0;
  uint64_t fn = 0;
};

struct ConfusionCounts {
  std::map<int32_t, ClassCounts> classes;
  uint64_t evaluated = 0;
  uint64_t correct = 0;

  void add(int32_t prediction, int32_t target);
};

struct ClassPrf {
  int32_t cls = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  uint64_t support = 0;  // TP + FN
};

// Macro by default: unweighted mean over classes present in the targets;
// weighted averages by support instead. Zero-denominator quantities score 0.
struct PrfSummary {
  std::vector<ClassPrf> per_class;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool weighted = false;
};

PrfSummary macro_prf(const ConfusionCounts& confusion, bool weighted = false);

struct HorizonResult {
  int horizon = 0;
  uint64_t evaluated = 0;
  double joint_accuracy = 0;  // all h predictions correct
  double step_accuracy = 0;   // per (example, step) pair
};

struct TableHorizonResult {
  std::string table;
  int horizon = 0;
  uint64_t evaluated = 0;
  double joint_accuracy = 0;
};

struct MetricsReport {
  std::string scope;
  std::string task;
  std::string model;
  uint64_t seed = 0;
  std::vector<HorizonResult> horizons;
  PrfSummary prf;  // horizon 1
  std::vector<TableHorizonResult> by_table;
};

// Per-example rollout correctness, reusable by the drift analysis.
struct EvalTrace {
  int max_horizon = 0;
  std::vector<uint64_t> anchors;
  std::vector<uint8_t> target_counts;
  std::vector<uint8_t> step_correct;  // examples x max_horizon, row-major
};

MetricsReport multi_horizon_eval(const models::Model& model, const prep::WindowedDataset& dataset,
                                 int max_horizon = 4, bool weighted = false,
                                 EvalTrace* trace_out = nullptr);

struct DriftWindow {
  uint64_t start_ns = 0;  // relative to the test split's minimum anchor
  uint64_t end_ns = 0;
  uint64_t evaluated = 0;
  double accuracy = 0;  // NaN marks an empty window
};

struct DriftReport {
  int horizon = 0;
  std::vector<DriftWindow> windows;
};

DriftReport temporal_drift(const models::Model& model, const prep::WindowedDataset& dataset,
                           int n_windows, int horizon);
DriftReport drift_from_trace(const EvalTrace& trace, int n_windows, int horizon);

struct MetricAggregate {
  double mean = 0;
  double stddev = 0;  // sample standard deviation
};

struct HorizonAggregate {
  int horizon = 0;
  uint64_t evaluated = 0;
  MetricAggregate joint;
  MetricAggregate step;
};

struct AggregateReport {
  std::string scope;
  std::string task;
  std::string model;
  size_t n_seeds = 0;
  std::vector<HorizonAggregate> horizons;
  MetricAggregate precision;
  MetricAggregate recall;
  MetricAggregate f1;
};

// Unweighted mean and sample std per metric across seeds (homogeneous
// scope/task/model required).
AggregateReport summarize_runs(const std::vector<MetricsReport>& reports);

MetricAggregate aggregate(const std::vector<double>& values);

// CSV renderers: UTF-8, comma-delimited, header row, 6-decimal floats; empty
// field for null values.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
std::string by_table_csv(const std::vector<MetricsReport>& reports);
struct DriftRow {
  std::string scope;
  std::string task;
  std::string model;
  uint64_t seed = 0;
  DriftReport report;
};
std::string drift_csv(const std::vector<DriftRow>& rows);
std::string summary_csv(const std::vector<AggregateReport>& reports);

}  // namespace lockseer::evalkit
