#include "lockseer/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lockseer::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<long>(content.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::array<const char*, 5> kMixKeys = {"new_order", "payment", "order_status", "delivery",
                                             "stock_level"};

simgen::WorkloadConfig workload_from_json(const json& j) {
  simgen::WorkloadConfig cfg;
  if (j.contains("warehouses")) cfg.warehouses = j.at("warehouses").get<uint64_t>();
  if (j.contains("clients")) cfg.clients = j.at("clients").get<uint64_t>();
  if (j.contains("transactions")) cfg.transactions = j.at("transactions").get<uint64_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("mean_gap_ns")) cfg.mean_gap_ns = j.at("mean_gap_ns").get<double>();
  if (j.contains("mix")) {
    const auto& mix = j.at("mix");
    for (size_t i = 0; i < kMixKeys.size(); ++i)
      if (mix.contains(kMixKeys[i])) cfg.mix[i] = mix.at(kMixKeys[i]).get<double>();
  }
  if (j.contains("page_space"))
    for (const auto& [table, pages] : j.at("page_space").items())
      cfg.page_space[table] = pages.get<uint64_t>();
  if (j.contains("skew"))
    for (const auto& [table, s] : j.at("skew").items()) cfg.skew[table] = s.get<double>();
  return cfg;
}

json workload_to_json(const simgen::WorkloadConfig& cfg) {
  json mix;
  for (size_t i = 0; i < kMixKeys.size(); ++i) mix[kMixKeys[i]] = cfg.mix[i];
  return json{{"warehouses", cfg.warehouses}, {"clients", cfg.clients},
              {"transactions", cfg.transactions}, {"seed", cfg.seed},
              {"mean_gap_ns", cfg.mean_gap_ns}, {"mix", mix},
              {"page_space", cfg.page_space}, {"skew", cfg.skew}};
}

models::ModelConfig model_from_json(const json& j, models::ModelConfig base) {
  if (j.contains("window")) base.window = j.at("window").get<int>();
  if (j.contains("embed_dim")) base.embed_dim = j.at("embed_dim").get<int>();
  if (j.contains("heads")) base.heads = j.at("heads").get<int>();
  if (j.contains("ffn_hidden")) base.ffn_hidden = j.at("ffn_hidden").get<int>();
  if (j.contains("dropout")) base.dropout = j.at("dropout").get<double>();
  if (j.contains("encoder_layers")) base.encoder_layers = j.at("encoder_layers").get<int>();
  if (j.contains("lstm_hidden")) base.lstm_hidden = j.at("lstm_hidden").get<int>();
  if (j.contains("lstm_layers")) base.lstm_layers = j.at("lstm_layers").get<int>();
  if (j.contains("head_hidden")) base.head_hidden = j.at("head_hidden").get<int>();
  return base;
}

json model_to_json(const models::ModelConfig& c) {
  return json{{"window", c.window},
              {"embed_dim", c.embed_dim},
              {"heads", c.heads},
              {"ffn_hidden", c.ffn_hidden},
              {"dropout", c.dropout},
              {"encoder_layers", c.encoder_layers},
              {"lstm_hidden", c.lstm_hidden},
              {"lstm_layers", c.lstm_layers},
              {"head_hidden", c.head_hidden}};
}

train::TrainConfig train_from_json(const json& j, train::TrainConfig base) {
  if (j.contains("epochs")) base.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<int>();
  if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("weight_decay")) base.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("n_seeds")) base.n_seeds = j.at("n_seeds").get<int>();
  if (j.contains("seeds")) base.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  return base;
}

json train_to_json(const train::TrainConfig& c) {
  json out{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"n_seeds", c.n_seeds}};
  if (!c.seeds.empty()) out["seeds"] = c.seeds;
  return out;
}

std::string sanitize_for_filename(std::string s) {
  for (char& c : s)
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '_';
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  int sources = 0;
  if (simulate.has_value()) ++sources;
  if (!canonical_path.empty()) ++sources;
  if (!raw_path.empty()) ++sources;
  if (sources != 1) throw ConfigError("exactly one input source is required");
  if (task == prep::Task::PageLocal && regime != train::Regime::Local)
    throw ConfigError("page_local task implies the local regime");
  if (model_kinds.empty()) throw ConfigError("at least one model kind is required");
  if (horizons < 1 || horizons > 4) throw ConfigError("horizons must be in 1..4");
  if (drift_windows < 2) throw ConfigError("drift_windows must be >= 2");
  if (out_dir.empty()) throw ConfigError("output directory is required");
  train.validate();
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const Overrides& o) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }

  ExperimentConfig cfg;
  if (j.contains("source")) {
    const auto& src = j.at("source");
    if (src.contains("simulate")) cfg.simulate = workload_from_json(src.at("simulate"));
    if (src.contains("canonical")) cfg.canonical_path = src.at("canonical").get<std::string>();
    if (src.contains("raw")) cfg.raw_path = src.at("raw").get<std::string>();
  }
  if (j.contains("task")) cfg.task = prep::parse_task(j.at("task").get<std::string>());
  if (j.contains("regime")) cfg.regime = train::parse_regime(j.at("regime").get<std::string>());
  if (j.contains("models")) {
    cfg.model_kinds.clear();
    for (const auto& m : j.at("models"))
      cfg.model_kinds.push_back(models::parse_model_kind(m.get<std::string>()));
  }
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"), cfg.model);
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"), cfg.train);
  if (j.contains("horizons")) cfg.horizons = j.at("horizons").get<int>();
  if (j.contains("drift_windows")) cfg.drift_windows = j.at("drift_windows").get<int>();
  if (j.contains("weighted_metrics")) cfg.weighted_metrics = j.at("weighted_metrics").get<bool>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<uint64_t>();

  // Flags override config keys.
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.task) cfg.task = prep::parse_task(*o.task);
  if (o.regime) cfg.regime = train::parse_regime(*o.regime);
  if (o.model_kinds) {
    cfg.model_kinds.clear();
    for (const auto& m : *o.model_kinds) cfg.model_kinds.push_back(models::parse_model_kind(m));
  }
  if (o.horizons) cfg.horizons = *o.horizons;
  if (o.drift_windows) cfg.drift_windows = *o.drift_windows;

  cfg.train.master_seed = cfg.master_seed;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path, const Overrides& overrides) {
  return parse_experiment_config(read_text_file(path), overrides);
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
  json src;
  if (cfg.simulate.has_value()) src["simulate"] = workload_to_json(*cfg.simulate);
  if (!cfg.canonical_path.empty()) src["canonical"] = cfg.canonical_path;
  if (!cfg.raw_path.empty()) src["raw"] = cfg.raw_path;
  json kinds = json::array();
  for (auto k : cfg.model_kinds) kinds.push_back(std::string(models::to_string(k)));
  json j{{"source", src},
         {"task", std::string(prep::to_string(cfg.task))},
         {"regime", std::string(train::to_string(cfg.regime))},
         {"models", kinds},
         {"model", model_to_json(cfg.model)},
         {"train", train_to_json(cfg.train)},
         {"horizons", cfg.horizons},
         {"drift_windows", cfg.drift_windows},
         {"weighted_metrics", cfg.weighted_metrics},
         {"out", cfg.out_dir},
         {"master_seed", cfg.master_seed}};
  return j.dump(2) + "\n";
}

SimulateResult cmd_simulate(const simgen::WorkloadConfig& config, const std::string& out_dir,
                            bool also_raw) {
  simgen::WorkloadConfig cfg = config;
  cfg.validate();
  fs::create_directories(out_dir);
  const auto events = simgen::generate_workload(cfg);

  SimulateResult result;
  result.events_path = (fs::path(out_dir) / "events.lockevents").string();
  result.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  result.event_count = events.size();

  std::ostringstream content;
  ingest::write_lockevents(events, content);
  const std::string bytes = content.str();
  write_text_file(result.events_path, bytes);
  result.sha256 = sha256_hex(bytes);

  if (also_raw) {
    std::ostringstream raw;
    simgen::write_raw_trace(events, raw);
    write_text_file((fs::path(out_dir) / "events.rawtrace").string(), raw.str());
  }

  json manifest{{"events", result.event_count},
                {"sha256", result.sha256},
                {"config", workload_to_json(cfg)},
                {"config_sha256", sha256_hex(workload_to_json(cfg).dump())}};
  write_text_file(result.manifest_path, manifest.dump(2) + "\n");
  return result;
}

IngestResult cmd_ingest(const std::string& input_path, const std::string& out_dir,
                        const IngestOptions& options) {
  fs::create_directories(out_dir);
  IngestResult result;

  std::vector<LockEvent> events;
  if (options.raw) {
    std::ifstream in(input_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + input_path + "'");
    events = ingest::parse_raw_trace(in, result.summary);
  } else {
    std::ifstream in(input_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + input_path + "'");
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      ++result.summary.total_lines;
      try {
        events.push_back(ingest::parse_canonical_line(line, line_no));
        ++result.summary.parsed;
      } catch (const DataError&) {
        ++result.summary.malformed;
      }
    }
  }
  if (result.summary.total_lines == 0) throw DataError("empty input '" + input_path + "'");
  if (events.empty()) throw DataError("no lock events parsed from '" + input_path + "'");
  const double malformed_fraction = static_cast<double>(result.summary.malformed) /
                                    static_cast<double>(result.summary.total_lines);
  if (malformed_fraction > options.max_malformed_fraction)
    throw DataError("malformed line fraction " + format_f6(malformed_fraction) +
                    " exceeds the tolerated " + format_f6(options.max_malformed_fraction));

  // Table-1-style distribution, computed before filtering.
  result.distribution = ingest::lock_type_distribution(events);

  auto filtered = ingest::filter_events(events, options.keep_objs, options.excluded_schemas);
  filtered = ingest::sort_chronological(std::move(filtered));
  result.emitted = filtered.size();

  result.events_path = (fs::path(out_dir) / "events.lockevents").string();
  result.distribution_path = (fs::path(out_dir) / "distribution.csv").string();
  ingest::write_lockevents_file(filtered, result.events_path);
  write_text_file(result.distribution_path, result.distribution.to_text());
  write_text_file((fs::path(out_dir) / "parse_summary.txt").string(), result.summary.to_text());
  return result;
}

PrepResult cmd_prep(const std::string& events_path, prep::Task task,
                    const std::string& local_table, const std::string& out_dir,
                    const prep::DatasetOptions& options) {
  fs::create_directories(out_dir);
  auto events = ingest::read_lockevents_file(events_path);
  events = ingest::sort_chronological(std::move(events));
  const auto ds = prep::build_dataset(events, task, local_table, options);

  std::string name = "dataset_" + std::string(prep::to_string(task));
  if (!local_table.empty()) name += "_" + sanitize_for_filename(local_table);
  name += ".lsds";

  PrepResult result;
  result.dataset_path = (fs::path(out_dir) / name).string();
  prep::write_dataset_file(ds, result.dataset_path);
  result.train_examples = ds.train.size();
  result.val_examples = ds.val.size();
  result.test_examples = ds.test.size();
  result.vocab_size = ds.vocab.size();
  return result;
}

namespace {

struct RunRecord {
  std::string scope;
  models::ModelKind kind;
  uint64_t seed;
  evalkit::MetricsReport metrics;
  train::TrainHistory history;
};

std::string history_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "scope,model,seed,epoch,train_loss,val_loss,is_best\n";
  for (const auto& rec : records)
    for (const auto& e : rec.history.epochs)
      os << rec.scope << "," << models::to_string(rec.kind) << "," << rec.seed << "," << e.epoch
         << "," << format_f6(e.train_loss) << "," << format_f6(e.val_loss) << ","
         << (e.is_best ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace

void cmd_run(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  fs::create_directories(fs::path(config.out_dir) / "checkpoints");

  // Input acquisition; canonical and raw inputs pass through the standard
  // table/page focus filter and chronological order.
  std::vector<LockEvent> events;
  json manifest;
  if (config.simulate.has_value()) {
    auto sim = cmd_simulate(*config.simulate, config.out_dir);
    events = ingest::read_lockevents_file(sim.events_path);
    manifest["source"] = {{"kind", "simulate"}, {"sha256", sim.sha256}};
  } else if (!config.canonical_path.empty()) {
    events = ingest::read_lockevents_file(config.canonical_path);
    manifest["source"] = {{"kind", "canonical"}, {"path", config.canonical_path}};
  } else {
    std::ifstream in(config.raw_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + config.raw_path + "'");
    ingest::ParseSummary summary;
    events = ingest::parse_raw_trace(in, summary);
    manifest["source"] = {{"kind", "raw"}, {"path", config.raw_path}};
  }
  events = ingest::filter_events(events);
  events = ingest::sort_chronological(std::move(events));
  if (events.empty()) throw DataError("no table/page events in the input");
  manifest["events"] = events.size();

  train::TrainConfig train_config = config.train;
  train_config.master_seed = config.master_seed;
  manifest["seeds"] = train_config.resolve_seeds();

  prep::DatasetOptions ds_options;
  ds_options.max_horizon = config.horizons;

  std::vector<RunRecord> records;
  std::vector<evalkit::DriftRow> drift_rows;
  std::vector<evalkit::AggregateReport> aggregates;
  std::vector<std::string> warnings;
  json scope_manifest = json::array();

  for (const auto kind : config.model_kinds) {
    models::ModelConfig model_config = config.model;
    model_config.kind = kind;
    auto scopes = train::train_regime(config.regime, config.task, events, model_config,
                                      train_config, ds_options, &warnings);
    for (auto& scope : scopes) {
      std::vector<evalkit::MetricsReport> seed_reports;
      for (auto& run : scope.runs) {
        models::ModelConfig eval_config = model_config;
        eval_config.vocab_size = static_cast<int>(scope.dataset.vocab.size());
        eval_config.window = scope.dataset.window;
        eval_config.seed = run.seed;
        models::Model model{eval_config, run.params};

        evalkit::EvalTrace trace;
        auto metrics = evalkit::multi_horizon_eval(model, scope.dataset, config.horizons,
                                                   config.weighted_metrics, &trace);
        metrics.scope = scope.scope;
        metrics.seed = run.seed;
        seed_reports.push_back(metrics);

        for (int h = 1; h <= config.horizons; ++h)
          drift_rows.push_back(evalkit::DriftRow{
              scope.scope, metrics.task, metrics.model, run.seed,
              evalkit::drift_from_trace(trace, config.drift_windows, h)});

        if (kind != models::ModelKind::Naive) {
          models::CheckpointMeta meta{run.seed, run.history.best_epoch,
                                      run.history.best_val_loss};
          const std::string ckpt_name = sanitize_for_filename(scope.scope) + "__" +
                                        std::string(models::to_string(kind)) + "__s" +
                                        std::to_string(run.seed) + ".ckpt";
          models::save_checkpoint(model, scope.dataset.vocab, meta,
                                  (fs::path(config.out_dir) / "checkpoints" / ckpt_name).string());
        }
        records.push_back(
            RunRecord{scope.scope, kind, run.seed, std::move(metrics), std::move(run.history)});
      }
      aggregates.push_back(evalkit::summarize_runs(seed_reports));
      if (kind == config.model_kinds.front())
        scope_manifest.push_back({{"scope", scope.scope},
                                  {"train_examples", scope.dataset.train.size()},
                                  {"val_examples", scope.dataset.val.size()},
                                  {"test_examples", scope.dataset.test.size()},
                                  {"vocab_size", scope.dataset.vocab.size()}});
    }
  }
  manifest["scopes"] = scope_manifest;
  manifest["warnings"] = warnings;

  std::vector<evalkit::MetricsReport> all_metrics;
  all_metrics.reserve(records.size());
  for (const auto& rec : records) all_metrics.push_back(rec.metrics);

  write_text_file((fs::path(config.out_dir) / "config.json").string(),
                  resolved_config_json(config));
  write_text_file((fs::path(config.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  write_text_file((fs::path(config.out_dir) / "history.csv").string(), history_csv(records));
  write_text_file((fs::path(config.out_dir) / "metrics.csv").string(),
                  evalkit::metrics_csv(all_metrics));
  write_text_file((fs::path(config.out_dir) / "metrics_by_table.csv").string(),
                  evalkit::by_table_csv(all_metrics));
  write_text_file((fs::path(config.out_dir) / "drift.csv").string(),
                  evalkit::drift_csv(drift_rows));
  write_text_file((fs::path(config.out_dir) / "summary.csv").string(),
                  evalkit::summary_csv(aggregates));
}

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    for (;;) {
      const auto pos = line.find(',', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

void cmd_report(const std::string& run_dir) {
  const auto summary_path = fs::path(run_dir) / "summary.csv";
  const auto by_table_path = fs::path(run_dir) / "metrics_by_table.csv";
  const auto drift_path = fs::path(run_dir) / "drift.csv";
  for (const auto& p : {summary_path, by_table_path, drift_path})
    if (!fs::exists(p)) throw DataError("missing run artifact '" + p.string() + "'");

  const auto report_dir = fs::path(run_dir) / "report";
  fs::create_directories(report_dir);

  // (a) Model x metric table at horizon 1, per scope.
  {
    const auto rows = parse_csv(read_text_file(summary_path.string()));
    std::ostringstream os;
    std::string current_scope;
    for (size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 16 || r[4] != "1") continue;
      if (r[0] != current_scope) {
        current_scope = r[0];
        os << (i > 1 ? "\n" : "") << "scope=" << r[0] << " task=" << r[1] << " horizon=1 (mean of "
           << r[3] << " seeds)\n";
        os << "model        accuracy   precision  recall     f1\n";
      }
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-12s %-10s %-10s %-10s %-10s\n", r[2].c_str(),
                    r[6].c_str(), r[10].c_str(), r[12].c_str(), r[14].c_str());
      os << buf;
    }
    write_text_file((report_dir / "table_summary.txt").string(), os.str());
  }

  // (b) Per-table x per-horizon accuracy with per-seed std.
  {
    const auto rows = parse_csv(read_text_file(by_table_path.string()));
    // key: scope, task, model, table, horizon -> accuracies across seeds
    std::map<std::tuple<std::string, std::string, std::string, std::string, int>,
             std::pair<std::vector<double>, uint64_t>>
        cells;
    for (size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 8) continue;
      const auto key = std::make_tuple(r[0], r[1], r[2], r[4], std::stoi(r[5]));
      auto& cell = cells[key];
      cell.first.push_back(std::stod(r[7]));
      cell.second = static_cast<uint64_t>(std::stoull(r[6]));
    }
    std::ostringstream os;
    os << "scope,task,model,table,horizon,evaluated,accuracy_mean,accuracy_std\n";
    for (const auto& [key, cell] : cells) {
      const auto agg = evalkit::aggregate(cell.first);
      os << std::get<0>(key) << "," << std::get<1>(key) << "," << std::get<2>(key) << ","
         << std::get<3>(key) << "," << std::get<4>(key) << "," << cell.second << ","
         << format_f6(agg.mean) << "," << format_f6(agg.stddev) << "\n";
    }
    write_text_file((report_dir / "accuracy_by_table.csv").string(), os.str());
  }

  // (c) Drift series per scope x model x horizon, seed-averaged.
  {
    const auto rows = parse_csv(read_text_file(drift_path.string()));
    struct WindowCell {
      uint64_t start = 0, end = 0, n = 0;
      std::vector<double> accs;
    };
    std::map<std::tuple<std::string, std::string, int>, std::map<int, WindowCell>> series;
    for (size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 10) continue;
      const auto key = std::make_tuple(r[0], r[2], std::stoi(r[4]));
      auto& cell = series[key][std::stoi(r[5])];
      cell.start = std::stoull(r[6]);
      cell.end = std::stoull(r[7]);
      cell.n = std::stoull(r[8]);
      if (!r[9].empty()) cell.accs.push_back(std::stod(r[9]));
    }
    for (const auto& [key, windows] : series) {
      std::ostringstream os;
      os << "window_start_ns,window_end_ns,n,accuracy\n";
      for (const auto& [w, cell] : windows) {
        os << cell.start << "," << cell.end << "," << cell.n << ",";
        if (!cell.accs.empty()) os << format_f6(evalkit::aggregate(cell.accs).mean);
        os << "\n";
      }
      const std::string name = "drift_" + sanitize_for_filename(std::get<0>(key)) + "_" +
                               std::get<1>(key) + "_h" + std::to_string(std::get<2>(key)) + ".csv";
      write_text_file((report_dir / name).string(), os.str());
    }
  }
}

}  // namespace lockseer::experiment
