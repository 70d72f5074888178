#include "lockseer/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "lockseer/ingest.hpp"

namespace lockseer::simgen {

namespace {
constexpr const char* kWarehouse = "WAREHOUSE";
constexpr const char* kDistrict = "DISTRICT";
constexpr const char* kCustomer = "CUSTOMER";
constexpr const char* kHistory = "HISTORY";
constexpr const char* kNewOrder = "NEWORDER";
constexpr const char* kOrders = "ORDERS";
constexpr const char* kOrderLine = "ORDERLINE";
constexpr const char* kStock = "STOCK";

// Median lock hold time of 50us, right-skewed.
constexpr double kHoldMu = 10.819778284410283;  // ln(50'000)
constexpr double kHoldSigma = 0.5;
}  // namespace

std::string_view to_string(TxnKind k) {
  switch (k) {
    case TxnKind::NewOrder: return "NewOrder";
    case TxnKind::Payment: return "Payment";
    case TxnKind::OrderStatus: return "OrderStatus";
    case TxnKind::Delivery: return "Delivery";
    case TxnKind::StockLevel: return "StockLevel";
  }
  throw InternalError("unreachable transaction kind");
}

const std::vector<std::string>& tpcc_tables() {
  static const std::vector<std::string> tables = {kCustomer, kDistrict,  kHistory, kNewOrder,
                                                  kOrderLine, kOrders,   kStock,   kWarehouse};
  return tables;
}

void WorkloadConfig::validate() {
  if (warehouses == 0) throw ConfigError("warehouses must be positive");
  if (clients == 0) throw ConfigError("clients must be positive");
  if (transactions == 0) throw ConfigError("empty workload: transactions must be positive");
  if (mean_gap_ns <= 0) throw ConfigError("mean_gap_ns must be positive");
  double sum = 0;
  for (double p : mix) {
    if (p < 0) throw ConfigError("mix probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mix probabilities must sum to 1");

  const std::map<std::string, uint64_t> default_pages = {
      {kWarehouse, 1},   {kDistrict, 32},   {kCustomer, 4096}, {kHistory, 2048},
      {kNewOrder, 1024}, {kOrders, 4096},   {kOrderLine, 16384}, {kStock, 8192}};
  for (const auto& [table, pages] : default_pages)
    if (!page_space.count(table)) page_space[table] = pages;
  const std::map<std::string, double> default_skew = {
      {kWarehouse, 0.0}, {kDistrict, 1.2}, {kCustomer, 0.8}, {kHistory, 0.8},
      {kNewOrder, 0.8},  {kOrders, 0.8},   {kOrderLine, 0.8}, {kStock, 0.8}};
  for (const auto& [table, s] : default_skew)
    if (!skew.count(table)) skew[table] = s;

  for (const auto& [table, pages] : page_space)
    if (pages == 0) throw ConfigError("page space for " + table + " must be >= 1");
  for (const auto& [table, s] : skew)
    if (s < 0) throw ConfigError("skew for " + table + " must be >= 0");
  if (page_space.at(kWarehouse) != 1)
    throw ConfigError("warehouse table must keep a single page");
}

std::vector<TemplateEntry> TransactionTemplate::expand(int k) const {
  if (!repeat.empty() && (k < repeat_min || k > repeat_max))
    throw InternalError("repeat count outside template bounds");
  std::vector<TemplateEntry> out = prefix;
  for (int i = 0; i < k; ++i) out.insert(out.end(), repeat.begin(), repeat.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

namespace {

using PR = TemplateEntry::PageRule;
using OT = LockObjectType;
using LM = LockMode;

TemplateEntry table_lock(const char* t, LM m) { return {t, OT::TABLE, m, PR::None}; }
TemplateEntry page_lock(const char* t, LM m, PR rule = PR::Fresh) { return {t, OT::PAGE, m, rule}; }

std::vector<TransactionTemplate> build_templates() {
  std::vector<TransactionTemplate> out(kAllTxnKinds.size());

  // Every PAGE entry is preceded by an intent lock (IS/IX) on its table.
  // U-then-X pairs model in-place updates and reuse the same page.
  {
    auto& t = out[static_cast<size_t>(TxnKind::NewOrder)];
    t.kind = TxnKind::NewOrder;
    t.prefix = {table_lock(kWarehouse, LM::IS), page_lock(kWarehouse, LM::S),
                table_lock(kDistrict, LM::IX),  page_lock(kDistrict, LM::U),
                page_lock(kDistrict, LM::X, PR::RepeatPrev),
                table_lock(kCustomer, LM::IS),  page_lock(kCustomer, LM::S),
                table_lock(kOrders, LM::IX),    page_lock(kOrders, LM::X),
                table_lock(kNewOrder, LM::IX),  page_lock(kNewOrder, LM::X),
                table_lock(kStock, LM::IX),     table_lock(kOrderLine, LM::IX)};
    t.repeat = {page_lock(kStock, LM::U), page_lock(kStock, LM::X, PR::RepeatPrev),
                page_lock(kOrderLine, LM::X)};
    t.repeat_min = 5;
    t.repeat_max = 15;
  }
  {
    auto& t = out[static_cast<size_t>(TxnKind::Payment)];
    t.kind = TxnKind::Payment;
    t.prefix = {table_lock(kWarehouse, LM::IS), page_lock(kWarehouse, LM::S),
                table_lock(kDistrict, LM::IS),  page_lock(kDistrict, LM::S),
                table_lock(kCustomer, LM::IX),  page_lock(kCustomer, LM::U),
                page_lock(kCustomer, LM::X, PR::RepeatPrev),
                table_lock(kHistory, LM::IX),   page_lock(kHistory, LM::X)};
  }
  {
    auto& t = out[static_cast<size_t>(TxnKind::OrderStatus)];
    t.kind = TxnKind::OrderStatus;
    t.prefix = {table_lock(kCustomer, LM::IS), page_lock(kCustomer, LM::S),
                table_lock(kOrders, LM::IS),   page_lock(kOrders, LM::S),
                table_lock(kOrderLine, LM::IS)};
    t.repeat = {page_lock(kOrderLine, LM::S)};
    t.repeat_min = 5;
    t.repeat_max = 15;
  }
  {
    auto& t = out[static_cast<size_t>(TxnKind::Delivery)];
    t.kind = TxnKind::Delivery;
    t.prefix = {table_lock(kNewOrder, LM::IX), page_lock(kNewOrder, LM::U),
                page_lock(kNewOrder, LM::X, PR::RepeatPrev),
                table_lock(kOrders, LM::IX),   page_lock(kOrders, LM::U),
                page_lock(kOrders, LM::X, PR::RepeatPrev),
                table_lock(kOrderLine, LM::IX)};
    t.repeat = {page_lock(kOrderLine, LM::X)};
    t.suffix = {table_lock(kCustomer, LM::IX), page_lock(kCustomer, LM::X)};
    t.repeat_min = 5;
    t.repeat_max = 15;
  }
  {
    auto& t = out[static_cast<size_t>(TxnKind::StockLevel)];
    t.kind = TxnKind::StockLevel;
    t.prefix = {table_lock(kDistrict, LM::IS), page_lock(kDistrict, LM::S),
                table_lock(kStock, LM::IS)};
    t.repeat = {page_lock(kStock, LM::S)};
    t.repeat_min = 5;
    t.repeat_max = 15;
  }
  return out;
}

}  // namespace

const TransactionTemplate& transaction_lock_template(TxnKind kind) {
  static const std::vector<TransactionTemplate> templates = build_templates();
  const auto idx = static_cast<size_t>(kind);
  if (idx >= templates.size()) throw ConfigError("unknown transaction kind");
  return templates[idx];
}

PageIdSampler::PageIdSampler(uint64_t page_space, double exponent) {
  if (page_space == 0) throw ConfigError("page space must be >= 1");
  cumulative_.resize(page_space);
  double acc = 0;
  for (uint64_t r = 1; r <= page_space; ++r) {
    acc += std::pow(static_cast<double>(r), -exponent);
    cumulative_[r - 1] = acc;
  }
}

uint64_t PageIdSampler::sample(Rng& rng) const {
  const double u = rng.uniform01() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto idx = static_cast<uint64_t>(it - cumulative_.begin());
  return std::min<uint64_t>(idx, cumulative_.size() - 1);
}

uint64_t sample_page_id(const std::string& table, const WorkloadConfig& config, Rng& rng) {
  if (!config.page_space.count(table)) throw ConfigError("no page space configured for " + table);
  PageIdSampler sampler(config.page_space.at(table), config.skew.count(table) ? config.skew.at(table) : 0.0);
  return sampler.sample(rng);
}

std::vector<LockEvent> generate_workload(WorkloadConfig config) {
  config.validate();

  std::map<std::string, PageIdSampler> samplers;
  for (const auto& [table, pages] : config.page_space)
    samplers.emplace(table, PageIdSampler(pages, config.skew.at(table)));

  Rng master(config.seed);
  Rng kind_rng = master.derive(1);

  std::vector<double> mix_cdf(config.mix.size());
  double acc = 0;
  for (size_t i = 0; i < config.mix.size(); ++i) {
    acc += config.mix[i];
    mix_cdf[i] = acc;
  }

  std::vector<double> client_clock(config.clients, 0.0);
  std::vector<LockEvent> events;
  uint64_t lock_seq = 0;

  for (uint64_t txn = 0; txn < config.transactions; ++txn) {
    const double u = kind_rng.uniform01();
    size_t kind_idx = 0;
    while (kind_idx + 1 < mix_cdf.size() && u >= mix_cdf[kind_idx]) ++kind_idx;
    const auto& tmpl = transaction_lock_template(kAllTxnKinds[kind_idx]);

    Rng txn_rng = master.derive(2 + txn);
    const int k = tmpl.repeat.empty()
                      ? 0
                      : tmpl.repeat_min +
                            static_cast<int>(txn_rng.uniform_int(
                                static_cast<uint64_t>(tmpl.repeat_max - tmpl.repeat_min + 1)));
    const auto entries = tmpl.expand(k);

    const size_t client = txn % config.clients;
    double& clock = client_clock[client];
    std::map<std::string, uint64_t> last_page;  // within this transaction

    for (const auto& entry : entries) {
      clock += txn_rng.exponential(config.mean_gap_ns);
      LockEvent ev;
      char idbuf[24];
      std::snprintf(idbuf, sizeof(idbuf), "L%010llu", static_cast<unsigned long long>(lock_seq++));
      ev.lock_id = idbuf;
      ev.start_ns = static_cast<uint64_t>(clock);
      ev.end_ns = ev.start_ns + static_cast<uint64_t>(txn_rng.lognormal(kHoldMu, kHoldSigma));
      ev.mode = entry.mode;
      ev.obj = entry.obj;
      ev.schema = "TPCC";
      ev.table = entry.table;
      if (entry.obj == LockObjectType::PAGE) {
        uint64_t page;
        if (entry.page_rule == TemplateEntry::PageRule::RepeatPrev && last_page.count(entry.table))
          page = last_page.at(entry.table);
        else
          page = samplers.at(entry.table).sample(txn_rng);
        last_page[entry.table] = page;
        ev.page = page;
      }
      validate_event(ev);
      events.push_back(std::move(ev));
    }
  }

  return ingest::sort_chronological(std::move(events));
}

void write_raw_trace(const std::vector<LockEvent>& events, std::ostream& out) {
  struct RawLine {
    uint64_t ts;
    int kind;  // 0 request, 1 release
    const LockEvent* ev;
  };
  std::vector<RawLine> lines;
  lines.reserve(events.size() * 2);
  for (const auto& e : events) {
    lines.push_back({e.start_ns, 0, &e});
    lines.push_back({e.end_ns, 1, &e});
  }
  std::sort(lines.begin(), lines.end(), [](const RawLine& a, const RawLine& b) {
    if (a.ts != b.ts) return a.ts < b.ts;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.ev->lock_id < b.ev->lock_id;
  });
  for (const auto& line : lines) {
    const auto& e = *line.ev;
    if (line.kind == 0) {
      out << e.start_ns << " sqlplrq lock=" << e.lock_id << " mode=" << to_string(e.mode)
          << " obj=" << to_string(e.obj) << " schema=" << e.schema;
      if (!e.table.empty()) out << " table=" << e.table;
      if (e.page.has_value()) out << " page=" << *e.page;
      out << "\n";
    } else {
      out << e.end_ns << " sqlplrl lock=" << e.lock_id << "\n";
    }
  }
}

}  // namespace lockseer::simgen
