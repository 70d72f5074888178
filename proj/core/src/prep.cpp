#include "lockseer/prep.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lockseer::prep {

using nlohmann::json;

std::string_view to_string(Task t) {
  switch (t) {
    case Task::Table: return "table";
    case Task::PageGlobal: return "page_global";
    case Task::PageLocal: return "page_local";
  }
  throw InternalError("unreachable task");
}

Task parse_task(std::string_view s) {
  if (s == "table") return Task::Table;
  if (s == "page_global") return Task::PageGlobal;
  if (s == "page_local") return Task::PageLocal;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw InternalError("unreachable split");
}

int BinSpec::apply(uint64_t page_id) const {
  // Bin = number of boundaries strictly below the id, clamped to [0, 9].
  int bin = 0;
  for (uint64_t b : boundaries)
    if (b < page_id) ++bin;
  return std::min(bin, static_cast<int>(boundaries.size()));
}

BinSpec fit_bins(const std::string& table, std::vector<uint64_t> page_ids, int n_bins) {
  if (page_ids.empty()) throw DataError("fit_bins: no page ids for table " + table);
  if (n_bins < 2) throw ConfigError("fit_bins: n_bins must be >= 2");
  std::sort(page_ids.begin(), page_ids.end());

  BinSpec spec;
  spec.table = table;
  const auto n = page_ids.size();
  for (int q = 1; q < n_bins; ++q) {
    // Nearest-rank quantile: x_ceil(p*n), 1-based.
    const double p = static_cast<double>(q) / n_bins;
    size_t rank = static_cast<size_t>(std::ceil(p * static_cast<double>(n)));
    rank = std::max<size_t>(rank, 1);
    spec.boundaries.push_back(page_ids[rank - 1]);
  }
  std::set<uint64_t> distinct(spec.boundaries.begin(), spec.boundaries.end());
  spec.degenerate = distinct.size() < spec.boundaries.size();
  return spec;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw DataError("cannot build a vocabulary from an empty event set");
  std::set<std::string> distinct(tokens.begin(), tokens.end());
  Vocabulary v;
  v.id_to_token_ = {"<pad>", "<unk>"};
  for (const auto& tok : distinct) v.id_to_token_.push_back(tok);
  for (size_t i = 0; i < v.id_to_token_.size(); ++i)
    v.token_to_id_[v.id_to_token_[i]] = static_cast<int32_t>(i);
  return v;
}

int32_t Vocabulary::encode(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::decode(int32_t id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size())
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<size_t>(id)];
}

uint64_t Vocabulary::fingerprint() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& tok : id_to_token_) {
    h = fnv1a64(tok, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

SplitSegments chronological_split(const std::vector<LockEvent>& events, double test_frac,
                                  double val_frac_of_train) {
  if (events.size() < 10) throw DataError("chronological_split: need at least 10 events");
  if (test_frac < 0 || test_frac >= 1 || val_frac_of_train < 0 || val_frac_of_train >= 1)
    throw ConfigError("split fractions must lie in [0, 1)");
  // Floor with a nudge so binary representation noise (100 * 0.30) cannot
  // drop a whole event.
  const auto floor_count = [](size_t n, double frac) {
    return static_cast<size_t>(std::floor(static_cast<double>(n) * frac + 1e-9));
  };
  const size_t n = events.size();
  const size_t n_test = floor_count(n, test_frac);
  const size_t n_remaining = n - n_test;
  const size_t n_val = floor_count(n_remaining, val_frac_of_train);
  const size_t n_train = n_remaining - n_val;

  SplitSegments out;
  out.train.assign(events.begin(), events.begin() + n_train);
  out.val.assign(events.begin() + n_train, events.begin() + n_remaining);
  out.test.assign(events.begin() + n_remaining, events.end());
  return out;
}

std::string event_token(const LockEvent& e, Task task,
                        const std::map<std::string, BinSpec>& binspecs) {
  switch (task) {
    case Task::Table:
      return e.table;
    case Task::PageGlobal: {
      const auto it = binspecs.find(e.table);
      if (it == binspecs.end()) throw DataError("no fitted bins for table " + e.table);
      return e.table + "#" + std::to_string(it->second.apply(e.page.value()));
    }
    case Task::PageLocal: {
      const auto it = binspecs.find(e.table);
      if (it == binspecs.end()) throw DataError("no fitted bins for table " + e.table);
      return std::to_string(it->second.apply(e.page.value()));
    }
  }
  throw InternalError("unreachable task");
}

TokenStream encode_task(const std::vector<LockEvent>& events, Task task,
                        const std::map<std::string, BinSpec>& binspecs, const Vocabulary& vocab) {
  TokenStream out;
  out.ids.reserve(events.size());
  out.end_ns.reserve(events.size());
  for (const auto& e : events) {
    out.ids.push_back(vocab.encode(event_token(e, task, binspecs)));
    out.end_ns.push_back(e.end_ns);
  }
  return out;
}

std::vector<Example> window_examples(const TokenStream& stream, int window, int max_horizon) {
  if (stream.ids.empty()) throw DataError("window_examples: empty token stream");
  if (window < 1 || max_horizon < 1) throw ConfigError("window and max_horizon must be >= 1");
  const size_t n = stream.ids.size();
  std::vector<Example> out;
  if (n < 2) return out;
  out.reserve(n - 1);
  for (size_t t = 0; t + 1 < n; ++t) {
    Example ex;
    ex.window.assign(static_cast<size_t>(window), Vocabulary::kPad);
    const size_t take = std::min<size_t>(t + 1, static_cast<size_t>(window));
    for (size_t i = 0; i < take; ++i)
      ex.window[static_cast<size_t>(window) - take + i] = stream.ids[t + 1 - take + i];
    const size_t n_targets = std::min<size_t>(static_cast<size_t>(max_horizon), n - 1 - t);
    ex.targets.assign(stream.ids.begin() + static_cast<long>(t + 1),
                      stream.ids.begin() + static_cast<long>(t + 1 + n_targets));
    ex.anchor_end_ns = stream.end_ns[t];
    out.push_back(std::move(ex));
  }
  return out;
}

const std::vector<Example>& WindowedDataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  throw InternalError("unreachable split");
}

namespace {

std::vector<LockEvent> select_task_events(const std::vector<LockEvent>& events, Task task,
                                          const std::string& local_table,
                                          const std::string& warehouse_table) {
  std::vector<LockEvent> out;
  for (const auto& e : events) {
    switch (task) {
      case Task::Table:
        // local_table restricts a table-task dataset to one table (local regime).
        if (e.obj == LockObjectType::TABLE && (local_table.empty() || e.table == local_table))
          out.push_back(e);
        break;
      case Task::PageGlobal:
        if (e.obj == LockObjectType::PAGE && e.table != warehouse_table) out.push_back(e);
        break;
      case Task::PageLocal:
        if (e.obj == LockObjectType::PAGE && e.table == local_table) out.push_back(e);
        break;
    }
  }
  return out;
}

void check_anchor_ordering(const WindowedDataset& ds) {
  if (ds.train.empty() || ds.test.empty()) return;
  uint64_t max_train = 0;
  for (const auto& ex : ds.train) max_train = std::max(max_train, ex.anchor_end_ns);
  uint64_t min_test = UINT64_MAX;
  for (const auto& ex : ds.test) min_test = std::min(min_test, ex.anchor_end_ns);
  if (max_train > min_test)
    throw DataError("chronological split violated: a train anchor ends after a test anchor");
}

}  // namespace

WindowedDataset build_dataset(const std::vector<LockEvent>& sorted_events, Task task,
                              const std::string& local_table, const DatasetOptions& options) {
  if (task == Task::PageLocal && local_table.empty())
    throw ConfigError("page_local task requires a table");
  if (task == Task::PageLocal && local_table == options.warehouse_table)
    throw ConfigError("page_local task excludes the warehouse table");

  const auto events =
      select_task_events(sorted_events, task, local_table, options.warehouse_table);
  const auto segments =
      chronological_split(events, options.test_frac, options.val_frac_of_train);

  WindowedDataset ds;
  ds.task = task;
  ds.local_table = local_table;
  ds.window = options.window;
  ds.max_horizon = options.max_horizon;

  // Bins and vocabulary are fitted on the train segment only; anything seen
  // first in val/test encodes as UNK.
  if (task != Task::Table) {
    std::map<std::string, std::vector<uint64_t>> train_pages;
    for (const auto& e : segments.train) train_pages[e.table].push_back(e.page.value());
    for (auto& [table, pages] : train_pages)
      ds.binspecs.emplace(table, fit_bins(table, std::move(pages)));
  }

  std::vector<std::string> train_tokens;
  train_tokens.reserve(segments.train.size());
  for (const auto& e : segments.train) {
    // Events on tables without fitted bins cannot occur here: bins cover
    // exactly the train tables.
    train_tokens.push_back(event_token(e, task, ds.binspecs));
  }
  ds.vocab = Vocabulary::build(train_tokens);

  auto encode_segment = [&](const std::vector<LockEvent>& seg) {
    TokenStream stream;
    stream.ids.reserve(seg.size());
    stream.end_ns.reserve(seg.size());
    for (const auto& e : seg) {
      // A val/test event on an unseen table has no fitted bins; its token is
      // unseen by construction, so encode it as UNK directly.
      if (task != Task::Table && !ds.binspecs.count(e.table)) {
        stream.ids.push_back(Vocabulary::kUnk);
      } else {
        stream.ids.push_back(ds.vocab.encode(event_token(e, task, ds.binspecs)));
      }
      stream.end_ns.push_back(e.end_ns);
    }
    return stream;
  };

  ds.train = window_examples(encode_segment(segments.train), options.window, options.max_horizon);
  ds.val = window_examples(encode_segment(segments.val), options.window, options.max_horizon);
  ds.test = window_examples(encode_segment(segments.test), options.window, options.max_horizon);
  check_anchor_ordering(ds);
  return ds;
}

namespace {
constexpr char kDatasetMagic[4] = {'L', 'S', 'D', 'S'};
constexpr uint16_t kDatasetVersion = 1;

void put_examples(std::string& out, const std::vector<Example>& examples, int window) {
  le::put<uint64_t>(out, examples.size());
  for (const auto& ex : examples) {
    if (ex.window.size() != static_cast<size_t>(window))
      throw InternalError("example window length mismatch");
    for (int32_t id : ex.window) le::put<int32_t>(out, id);
    le::put<uint8_t>(out, static_cast<uint8_t>(ex.targets.size()));
    for (int32_t id : ex.targets) le::put<int32_t>(out, id);
    le::put<uint64_t>(out, ex.anchor_end_ns);
  }
}

std::vector<Example> get_examples(const std::string& buf, size_t& pos, int window) {
  const auto n = le::get<uint64_t>(buf, pos);
  std::vector<Example> out;
  out.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    Example ex;
    ex.window.resize(static_cast<size_t>(window));
    for (auto& id : ex.window) id = le::get<int32_t>(buf, pos);
    const auto n_targets = le::get<uint8_t>(buf, pos);
    ex.targets.resize(n_targets);
    for (auto& id : ex.targets) id = le::get<int32_t>(buf, pos);
    ex.anchor_end_ns = le::get<uint64_t>(buf, pos);
    out.push_back(std::move(ex));
  }
  return out;
}
}  // namespace

std::string serialize_dataset(const WindowedDataset& ds) {
  json header;
  header["task"] = std::string(to_string(ds.task));
  header["local_table"] = ds.local_table;
  header["window"] = ds.window;
  header["max_horizon"] = ds.max_horizon;
  header["vocab"] = ds.vocab.tokens();
  json bins = json::array();
  for (const auto& [table, spec] : ds.binspecs)
    bins.push_back({{"table", table}, {"boundaries", spec.boundaries}, {"degenerate", spec.degenerate}});
  header["binspecs"] = bins;
  const std::string header_text = header.dump();

  std::string out(kDatasetMagic, sizeof(kDatasetMagic));
  le::put<uint16_t>(out, kDatasetVersion);
  le::put<uint32_t>(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  put_examples(out, ds.train, ds.window);
  put_examples(out, ds.val, ds.window);
  put_examples(out, ds.test, ds.window);
  return out;
}

WindowedDataset deserialize_dataset(const std::string& bytes) {
  size_t pos = 0;
  if (bytes.size() < sizeof(kDatasetMagic) ||
      std::memcmp(bytes.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0)
    throw DataError("not a dataset container");
  pos = sizeof(kDatasetMagic);
  const auto version = le::get<uint16_t>(bytes, pos);
  if (version != kDatasetVersion)
    throw DataError("unsupported dataset version " + std::to_string(version));
  const auto header_len = le::get<uint32_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw DataError("truncated dataset header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad dataset header: ") + e.what());
  }
  pos += header_len;

  WindowedDataset ds;
  ds.task = parse_task(header.at("task").get<std::string>());
  ds.local_table = header.at("local_table").get<std::string>();
  ds.window = header.at("window").get<int>();
  ds.max_horizon = header.at("max_horizon").get<int>();
  auto tokens = header.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw DataError("bad dataset vocabulary");
  ds.vocab = Vocabulary::build(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
  if (ds.vocab.tokens() != tokens) throw DataError("dataset vocabulary is not in canonical order");
  for (const auto& b : header.at("binspecs")) {
    BinSpec spec;
    spec.table = b.at("table").get<std::string>();
    spec.boundaries = b.at("boundaries").get<std::vector<uint64_t>>();
    spec.degenerate = b.at("degenerate").get<bool>();
    ds.binspecs.emplace(spec.table, std::move(spec));
  }
  ds.train = get_examples(bytes, pos, ds.window);
  ds.val = get_examples(bytes, pos, ds.window);
  ds.test = get_examples(bytes, pos, ds.window);
  if (pos != bytes.size()) throw DataError("trailing bytes after dataset payload");
  return ds;
}

void write_dataset_file(const WindowedDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  const auto bytes = serialize_dataset(ds);
  out.write(bytes.data(), static_cast<long>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

WindowedDataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_dataset(buf.str());
}

}  // namespace lockseer::prep
