#include "lockseer/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lockseer::evalkit {

using models::Model;
using prep::WindowedDataset;

double accuracy(const std::vector<int32_t>& predictions, const std::vector<int32_t>& targets) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw DataError("accuracy: prediction/target lengths must match and be non-empty");
  size_t correct = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == targets[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

void ConfusionCounts::add(int32_t prediction, int32_t target) {
  ++evaluated;
  if (prediction == target) {
    ++correct;
    ++classes[target].tp;
  } else {
    ++classes[prediction].fp;
    ++classes[target].fn;
  }
}

PrfSummary macro_prf(const ConfusionCounts& confusion, bool weighted) {
  PrfSummary out;
  out.weighted = weighted;
  uint64_t total_support = 0;
  for (const auto& [cls, counts] : confusion.classes) {
    const uint64_t support = counts.tp + counts.fn;
    if (support == 0) continue;  // class never appears in the targets
    ClassPrf c;
    c.cls = cls;
    c.support = support;
    const uint64_t pred_count = counts.tp + counts.fp;
    c.precision = pred_count > 0 ? static_cast<double>(counts.tp) / static_cast<double>(pred_count) : 0.0;
    c.recall = static_cast<double>(counts.tp) / static_cast<double>(support);
    c.f1 = (c.precision + c.recall) > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                                        : 0.0;
    total_support += support;
    out.per_class.push_back(c);
  }
  if (out.per_class.empty()) throw DataError("macro_prf: no class has any target");
  for (const auto& c : out.per_class) {
    const double w = weighted
                         ? static_cast<double>(c.support) / static_cast<double>(total_support)
                         : 1.0 / static_cast<double>(out.per_class.size());
    out.precision += w * c.precision;
    out.recall += w * c.recall;
    out.f1 += w * c.f1;
  }
  return out;
}

namespace {

std::string table_of_token(const std::string& token, prep::Task task,
                           const std::string& local_table) {
  switch (task) {
    case prep::Task::Table:
      return token;
    case prep::Task::PageGlobal: {
      const auto pos = token.find('#');
      return pos == std::string::npos ? token : token.substr(0, pos);
    }
    case prep::Task::PageLocal:
      return local_table;
  }
  throw InternalError("unreachable task");
}

}  // namespace

MetricsReport multi_horizon_eval(const Model& model, const WindowedDataset& dataset,
                                 int max_horizon, bool weighted, EvalTrace* trace_out) {
  if (max_horizon < 1) throw ConfigError("max_horizon must be >= 1");
  if (max_horizon > dataset.max_horizon)
    throw ConfigError("dataset horizon too small for the requested evaluation");
  const auto& test = dataset.test;
  if (test.empty()) throw DataError("multi_horizon_eval: empty test split");

  const auto h_max = static_cast<size_t>(max_horizon);
  EvalTrace trace;
  trace.max_horizon = max_horizon;
  trace.anchors.reserve(test.size());
  trace.target_counts.reserve(test.size());
  trace.step_correct.assign(test.size() * h_max, 0);

  ConfusionCounts confusion;
  std::map<std::string, std::map<int, std::pair<uint64_t, uint64_t>>> table_stats;

  constexpr size_t kChunk = 512;
  const auto window = static_cast<size_t>(dataset.window);
  std::vector<int32_t> windows;
  for (size_t start = 0; start < test.size(); start += kChunk) {
    const size_t end = std::min(test.size(), start + kChunk);
    const size_t batch = end - start;
    windows.clear();
    windows.reserve(batch * window);
    for (size_t i = start; i < end; ++i)
      windows.insert(windows.end(), test[i].window.begin(), test[i].window.end());
    const auto preds = models::rollout_horizon_batch(model, std::move(windows), batch, max_horizon);
    windows = std::vector<int32_t>();

    for (size_t i = start; i < end; ++i) {
      const auto& ex = test[i];
      trace.anchors.push_back(ex.anchor_end_ns);
      trace.target_counts.push_back(static_cast<uint8_t>(ex.targets.size()));
      const int32_t* row = preds.data() + (i - start) * h_max;
      for (size_t s = 0; s < std::min(h_max, ex.targets.size()); ++s)
        trace.step_correct[i * h_max + s] = row[s] == ex.targets[s] ? 1 : 0;
      confusion.add(row[0], ex.targets[0]);

      const std::string table =
          table_of_token(dataset.vocab.decode(ex.targets[0]), dataset.task, dataset.local_table);
      bool all_ok = true;
      for (size_t s = 0; s < std::min(h_max, ex.targets.size()); ++s) {
        all_ok = all_ok && trace.step_correct[i * h_max + s] == 1;
        auto& cell = table_stats[table][static_cast<int>(s + 1)];
        ++cell.first;
        if (all_ok) ++cell.second;
      }
    }
  }

  MetricsReport report;
  report.task = std::string(prep::to_string(dataset.task));
  report.model = std::string(models::to_string(model.config.kind));
  for (int h = 1; h <= max_horizon; ++h) {
    uint64_t evaluated = 0, joint_ok = 0, steps_total = 0, steps_ok = 0;
    for (size_t i = 0; i < test.size(); ++i) {
      if (trace.target_counts[i] < h) continue;
      ++evaluated;
      bool all_ok = true;
      for (int s = 0; s < h; ++s) {
        const bool ok = trace.step_correct[i * h_max + static_cast<size_t>(s)] == 1;
        all_ok = all_ok && ok;
        ++steps_total;
        if (ok) ++steps_ok;
      }
      if (all_ok) ++joint_ok;
    }
    if (evaluated == 0)
      throw DataError("multi_horizon_eval: no test example has " + std::to_string(h) + " targets");
    HorizonResult res;
    res.horizon = h;
    res.evaluated = evaluated;
    res.joint_accuracy = static_cast<double>(joint_ok) / static_cast<double>(evaluated);
    res.step_accuracy = static_cast<double>(steps_ok) / static_cast<double>(steps_total);
    report.horizons.push_back(res);
  }
  report.prf = macro_prf(confusion, weighted);
  for (const auto& [table, by_h] : table_stats)
    for (const auto& [h, cell] : by_h)
      report.by_table.push_back(TableHorizonResult{
          table, h, cell.first,
          static_cast<double>(cell.second) / static_cast<double>(cell.first)});

  if (trace_out != nullptr) *trace_out = std::move(trace);
  return report;
}

DriftReport drift_from_trace(const EvalTrace& trace, int n_windows, int horizon) {
  if (n_windows < 2) throw ConfigError("temporal_drift: n_windows must be >= 2");
  if (horizon < 1 || horizon > trace.max_horizon)
    throw ConfigError("temporal_drift: horizon outside evaluated range");
  if (trace.anchors.empty()) throw DataError("temporal_drift: empty trace");

  const uint64_t lo = *std::min_element(trace.anchors.begin(), trace.anchors.end());
  const uint64_t hi = *std::max_element(trace.anchors.begin(), trace.anchors.end());
  const double span = static_cast<double>(hi - lo);
  const auto n = static_cast<size_t>(n_windows);
  const double width = span / static_cast<double>(n);

  DriftReport report;
  report.horizon = horizon;
  report.windows.resize(n);
  for (size_t w = 0; w < n; ++w) {
    report.windows[w].start_ns = static_cast<uint64_t>(width * static_cast<double>(w));
    report.windows[w].end_ns =
        w + 1 == n ? (hi - lo) : static_cast<uint64_t>(width * static_cast<double>(w + 1));
  }

  std::vector<uint64_t> correct(n, 0);
  const auto h_max = static_cast<size_t>(trace.max_horizon);
  for (size_t i = 0; i < trace.anchors.size(); ++i) {
    if (trace.target_counts[i] < horizon) continue;
    size_t w = 0;
    if (span > 0) {
      const double rel = static_cast<double>(trace.anchors[i] - lo);
      w = std::min(n - 1, static_cast<size_t>(rel / width));
    }
    ++report.windows[w].evaluated;
    bool all_ok = true;
    for (int s = 0; s < horizon; ++s)
      all_ok = all_ok && trace.step_correct[i * h_max + static_cast<size_t>(s)] == 1;
    if (all_ok) ++correct[w];
  }
  for (size_t w = 0; w < n; ++w)
    report.windows[w].accuracy =
        report.windows[w].evaluated > 0
            ? static_cast<double>(correct[w]) / static_cast<double>(report.windows[w].evaluated)
            : std::numeric_limits<double>::quiet_NaN();
  return report;
}

DriftReport temporal_drift(const Model& model, const WindowedDataset& dataset, int n_windows,
                           int horizon) {
  EvalTrace trace;
  multi_horizon_eval(model, dataset, horizon, false, &trace);
  return drift_from_trace(trace, n_windows, horizon);
}

MetricAggregate aggregate(const std::vector<double>& values) {
  MetricAggregate out;
  if (values.empty()) throw DataError("aggregate: no values");
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

AggregateReport summarize_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw DataError("summarize_runs: no reports");
  AggregateReport out;
  out.scope = reports.front().scope;
  out.task = reports.front().task;
  out.model = reports.front().model;
  out.n_seeds = reports.size();
  for (const auto& r : reports)
    if (r.scope != out.scope || r.task != out.task || r.model != out.model)
      throw DataError("summarize_runs: reports are not homogeneous");

  const size_t n_horizons = reports.front().horizons.size();
  for (size_t h = 0; h < n_horizons; ++h) {
    std::vector<double> joint, step;
    for (const auto& r : reports) {
      if (r.horizons.size() != n_horizons)
        throw DataError("summarize_runs: horizon grids differ across seeds");
      joint.push_back(r.horizons[h].joint_accuracy);
      step.push_back(r.horizons[h].step_accuracy);
    }
    HorizonAggregate agg;
    agg.horizon = reports.front().horizons[h].horizon;
    agg.evaluated = reports.front().horizons[h].evaluated;
    agg.joint = aggregate(joint);
    agg.step = aggregate(step);
    out.horizons.push_back(agg);
  }
  std::vector<double> p, r, f;
  for (const auto& rep : reports) {
    p.push_back(rep.prf.precision);
    r.push_back(rep.prf.recall);
    f.push_back(rep.prf.f1);
  }
  out.precision = aggregate(p);
  out.recall = aggregate(r);
  out.f1 = aggregate(f);
  return out;
}

namespace {

std::string csv_f6(double v) {
  if (std::isnan(v)) return "";
  return format_f6(v);
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "scope,task,model,seed,horizon,evaluated,joint_accuracy,step_accuracy,precision,recall,"
        "f1\n";
  for (const auto& r : reports)
    for (const auto& h : r.horizons) {
      os << r.scope << "," << r.task << "," << r.model << "," << r.seed << "," << h.horizon << ","
         << h.evaluated << "," << csv_f6(h.joint_accuracy) << "," << csv_f6(h.step_accuracy);
      if (h.horizon == 1)
        os << "," << csv_f6(r.prf.precision) << "," << csv_f6(r.prf.recall) << ","
           << csv_f6(r.prf.f1);
      else
        os << ",,,";
      os << "\n";
    }
  return os.str();
}

std::string by_table_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "scope,task,model,seed,table,horizon,evaluated,joint_accuracy\n";
  for (const auto& r : reports)
    for (const auto& t : r.by_table)
      os << r.scope << "," << r.task << "," << r.model << "," << r.seed << "," << t.table << ","
         << t.horizon << "," << t.evaluated << "," << csv_f6(t.joint_accuracy) << "\n";
  return os.str();
}

std::string drift_csv(const std::vector<DriftRow>& rows) {
  std::ostringstream os;
  os << "scope,task,model,seed,horizon,window,window_start_ns,window_end_ns,evaluated,accuracy\n";
  for (const auto& row : rows)
    for (size_t w = 0; w < row.report.windows.size(); ++w) {
      const auto& win = row.report.windows[w];
      os << row.scope << "," << row.task << "," << row.model << "," << row.seed << ","
         << row.report.horizon << "," << w << "," << win.start_ns << "," << win.end_ns << ","
         << win.evaluated << "," << csv_f6(win.accuracy) << "\n";
    }
  return os.str();
}

std::string summary_csv(const std::vector<AggregateReport>& reports) {
  std::ostringstream os;
  os << "scope,task,model,seeds,horizon,evaluated,joint_mean,joint_std,step_mean,step_std,"
        "precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n";
  for (const auto& r : reports)
    for (const auto& h : r.horizons) {
      os << r.scope << "," << r.task << "," << r.model << "," << r.n_seeds << "," << h.horizon
         << "," << h.evaluated << "," << csv_f6(h.joint.mean) << "," << csv_f6(h.joint.stddev)
         << "," << csv_f6(h.step.mean) << "," << csv_f6(h.step.stddev);
      if (h.horizon == 1)
        os << "," << csv_f6(r.precision.mean) << "," << csv_f6(r.precision.stddev) << ","
           << csv_f6(r.recall.mean) << "," << csv_f6(r.recall.stddev) << "," << csv_f6(r.f1.mean)
           << "," << csv_f6(r.f1.stddev);
      else
        os << ",,,,,,";
      os << "\n";
    }
  return os.str();
}

}  // namespace lockseer::evalkit
