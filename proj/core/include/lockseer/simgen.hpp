#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "lockseer/events.hpp"

namespace lockseer::simgen {

enum class TxnKind { NewOrder, Payment, OrderStatus, Delivery, StockLevel };

inline constexpr std::array<TxnKind, 5> kAllTxnKinds = {TxnKind::NewOrder, TxnKind::Payment,
                                                        TxnKind::OrderStatus, TxnKind::Delivery,
                                                        TxnKind::StockLevel};

std::string_view to_string(TxnKind k);

// The eight TPC-C tables the generator locks.
const std::vector<std::string>& tpcc_tables();

struct WorkloadConfig {
  uint64_t warehouses = 100;
  uint64_t clients = 10;
  uint64_t transactions = 0;
  uint64_t seed = 0;
  // NewOrder, Payment, OrderStatus, Delivery, StockLevel.
  std::array<double, 5> mix = {0.45, 0.43, 0.04, 0.04, 0.04};
  std::map<std::string, uint64_t> page_space;  // filled with defaults by validate()
  std::map<std::string, double> skew;          // per-table Zipf exponent, >= 0
  double mean_gap_ns = 1'000'000.0;

  // Fills defaulted maps and throws ConfigError on invariant violations
  // (mix must sum to 1, warehouse page space must stay 1, ...).
  void validate();
};

struct TemplateEntry {
  enum class PageRule { None, Fresh, RepeatPrev };
  std::string table;
  LockObjectType obj = LockObjectType::TABLE;
  LockMode mode = LockMode::S;
  PageRule page_rule = PageRule::None;
};

// prefix + K repeats of `repeat` + suffix, K drawn uniformly per transaction.
struct TransactionTemplate {
  TxnKind kind;
  std::vector<TemplateEntry> prefix;
  std::vector<TemplateEntry> repeat;
  std::vector<TemplateEntry> suffix;
  int repeat_min = 0;
  int repeat_max = 0;

  std::vector<TemplateEntry> expand(int k) const;
  size_t entry_count(int k) const { return prefix.size() + repeat.size() * k + suffix.size(); }
};

const TransactionTemplate& transaction_lock_template(TxnKind kind);

// Zipf over ranked pages: P(page r-1) proportional to r^-exponent, r = 1..n.
// exponent 0 is uniform.
class PageIdSampler {
public:
  PageIdSampler(uint64_t page_space, double exponent);
  uint64_t sample(Rng& rng) const;

private:
  std::vector<double> cumulative_;
};

// Convenience wrapper that builds the table's sampler on the fly; use
// PageIdSampler directly for bulk draws.
uint64_t sample_page_id(const std::string& table, const WorkloadConfig& config, Rng& rng);

// Deterministic for a fixed config: `clients` logical streams with
// exponential inter-arrival are merged by start time.
std::vector<LockEvent> generate_workload(WorkloadConfig config);

// Emits the same events in the raw-trace reference grammar (request/release
// lines ordered by timestamp), for exercising the raw ingest path.
void write_raw_trace(const std::vector<LockEvent>& events, std::ostream& out);

}  // namespace lockseer::simgen
