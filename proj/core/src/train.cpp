#include "lockseer/train.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace lockseer::train {

using models::Model;
using models::ModelConfig;
using models::ModelKind;
using models::ModelParams;
using prep::Example;
using prep::WindowedDataset;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (seeds.empty() && n_seeds < 1) throw ConfigError("need at least one seed");
  std::set<uint64_t> distinct(seeds.begin(), seeds.end());
  if (!seeds.empty() && distinct.size() != seeds.size())
    throw ConfigError("seeds must be distinct");
}

std::vector<uint64_t> TrainConfig::resolve_seeds() const {
  validate();
  if (!seeds.empty()) return seeds;
  std::vector<uint64_t> out;
  out.reserve(static_cast<size_t>(n_seeds));
  uint64_t x = master_seed;
  std::set<uint64_t> used;
  while (out.size() < static_cast<size_t>(n_seeds)) {
    const uint64_t s = Rng::splitmix64(x);
    if (used.insert(s).second) out.push_back(s);
  }
  return out;
}

std::vector<std::vector<size_t>> make_batches(size_t n_examples, int batch_size, Rng& epoch_rng) {
  if (n_examples == 0) throw DataError("make_batches: no examples");
  std::vector<size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0);
  epoch_rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  const auto bs = static_cast<size_t>(batch_size);
  batches.reserve((n_examples + bs - 1) / bs);
  for (size_t start = 0; start < n_examples; start += bs) {
    const size_t end = std::min(n_examples, start + bs);
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

namespace {

// Flattens examples[indices] into a window buffer plus horizon-1 targets.
void gather_batch(const std::vector<Example>& examples, const std::vector<size_t>& indices,
                  int window, std::vector<int32_t>& windows, std::vector<int32_t>& targets) {
  windows.clear();
  targets.clear();
  windows.reserve(indices.size() * static_cast<size_t>(window));
  targets.reserve(indices.size());
  for (size_t idx : indices) {
    const Example& ex = examples[idx];
    windows.insert(windows.end(), ex.window.begin(), ex.window.end());
    targets.push_back(ex.targets.front());
  }
}

}  // namespace

double evaluate_loss(const Model& model, const std::vector<Example>& examples, int batch_size) {
  if (examples.empty()) throw DataError("evaluate_loss: no examples");
  double total = 0;
  std::vector<int32_t> windows, targets;
  std::vector<size_t> indices;
  for (size_t start = 0; start < examples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(examples.size(), start + static_cast<size_t>(batch_size));
    indices.resize(end - start);
    std::iota(indices.begin(), indices.end(), start);
    gather_batch(examples, indices, model.config.window, windows, targets);
    tensor::Tape tape;
    const auto bound = bind_params(tape, model.params, false);
    const auto logits = forward_logits(tape, model.config, bound, windows, indices.size(),
                                       /*train=*/false, nullptr);
    const auto loss = tape.softmax_cross_entropy(logits, targets);
    total += tape.val(loss)[0] * static_cast<double>(indices.size());
  }
  return total / static_cast<double>(examples.size());
}

FitResult fit(ModelConfig model_config, const WindowedDataset& dataset,
              const TrainConfig& train_config, uint64_t seed) {
  train_config.validate();
  model_config.vocab_size = static_cast<int>(dataset.vocab.size());
  model_config.window = dataset.window;
  model_config.seed = seed;
  model_config.validate();

  FitResult result;
  if (model_config.kind == ModelKind::Naive) return result;  // nothing to fit

  if (dataset.train.empty()) throw DataError("fit: empty train split");
  if (dataset.val.empty()) throw DataError("fit: empty validation split");

  Rng base(seed);
  Rng shuffle_rng = base.derive(1);
  Rng dropout_rng = base.derive(2);

  Model model{model_config, models::init_params(model_config)};
  std::vector<tensor::Array*> param_ptrs;
  std::vector<const tensor::Array*> param_cptrs;
  for (auto& [_, a] : model.params.entries) {
    param_ptrs.push_back(&a);
    param_cptrs.push_back(&a);
  }
  tensor::AdamWState opt_state(param_cptrs);
  tensor::AdamWConfig opt_config;
  opt_config.learning_rate = train_config.learning_rate;
  opt_config.weight_decay = train_config.weight_decay;

  result.history.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<int32_t> windows, targets;
  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    double epoch_loss = 0;
    const auto batches = make_batches(dataset.train.size(), train_config.batch_size, shuffle_rng);
    for (const auto& batch : batches) {
      gather_batch(dataset.train, batch, model_config.window, windows, targets);
      tensor::Tape tape;
      const auto bound = bind_params(tape, model.params, true);
      const auto logits = forward_logits(tape, model_config, bound, windows, batch.size(),
                                         /*train=*/true, &dropout_rng);
      const auto loss = tape.softmax_cross_entropy(logits, targets);
      tape.backward(loss);
      std::vector<const tensor::Array*> grads;
      grads.reserve(bound.size());
      for (const auto v : bound) grads.push_back(&tape.grad(v));
      opt_state.step(param_ptrs, grads, opt_config);
      epoch_loss += tape.val(loss)[0] * static_cast<double>(batch.size());
    }
    epoch_loss /= static_cast<double>(dataset.train.size());

    const double val_loss = evaluate_loss(model, dataset.val);
    EpochStats stats{epoch, epoch_loss, val_loss, false};
    if (val_loss < result.history.best_val_loss) {
      stats.is_best = true;
      result.history.best_val_loss = val_loss;
      result.history.best_epoch = epoch;
      result.params = model.params;  // snapshot
    }
    result.history.epochs.push_back(stats);
  }
  return result;
}

size_t worker_threads() {
  if (const char* env = std::getenv("LOCKSEER_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::vector<RunResult> run_repetitions(const ModelConfig& model_config,
                                       const WindowedDataset& dataset,
                                       const TrainConfig& train_config) {
  const auto seeds = train_config.resolve_seeds();
  std::vector<RunResult> results(seeds.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= seeds.size() || failed.load()) return;
      try {
        auto fitted = fit(model_config, dataset, train_config, seeds[i]);
        results[i] = RunResult{seeds[i], std::move(fitted.params), std::move(fitted.history)};
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failed.exchange(true))
          failure = "seed " + std::to_string(seeds[i]) + ": " + e.what();
        return;
      }
    }
  };

  const size_t n_workers = std::min(worker_threads(), seeds.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw DataError("run_repetitions failed: " + failure);
  return results;
}

std::string_view to_string(Regime r) {
  return r == Regime::Global ? "global" : "local";
}

Regime parse_regime(std::string_view s) {
  if (s == "global") return Regime::Global;
  if (s == "local") return Regime::Local;
  throw ConfigError("unknown regime '" + std::string(s) + "'");
}

std::vector<ScopeResult> train_regime(Regime regime, prep::Task task,
                                      const std::vector<LockEvent>& sorted_events,
                                      const ModelConfig& model_config,
                                      const TrainConfig& train_config,
                                      const prep::DatasetOptions& options,
                                      std::vector<std::string>* warnings) {
  if (task == prep::Task::PageLocal && regime != Regime::Local)
    throw ConfigError("page_local task implies the local regime");

  std::vector<ScopeResult> out;
  if (regime == Regime::Global) {
    ScopeResult scope;
    scope.scope = "global";
    scope.dataset = prep::build_dataset(sorted_events, task, "", options);
    scope.runs = run_repetitions(model_config, scope.dataset, train_config);
    out.push_back(std::move(scope));
    return out;
  }

  const LockObjectType obj =
      task == prep::Task::Table ? LockObjectType::TABLE : LockObjectType::PAGE;
  std::map<std::string, size_t> table_counts;
  for (const auto& e : sorted_events)
    if (e.obj == obj) ++table_counts[e.table];

  for (const auto& [table, count] : table_counts) {
    if (task != prep::Task::Table && table == options.warehouse_table) continue;
    if (count < 10) {
      if (warnings != nullptr)
        warnings->push_back("skipping table " + table + ": only " + std::to_string(count) +
                            " events");
      continue;
    }
    ScopeResult scope;
    scope.scope = "local:" + table;
    scope.table = table;
    const prep::Task scope_task = task == prep::Task::Table ? prep::Task::Table : prep::Task::PageLocal;
    scope.dataset = prep::build_dataset(sorted_events, scope_task, table, options);
    scope.runs = run_repetitions(model_config, scope.dataset, train_config);
    out.push_back(std::move(scope));
  }
  if (out.empty()) throw DataError("train_regime: no table had enough events");
  return out;
}

}  // namespace lockseer::train
