#include "lockseer/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lockseer {

std::string_view to_string(LockMode m) {
  switch (m) {
    case LockMode::S: return "S";
    case LockMode::X: return "X";
    case LockMode::IX: return "IX";
    case LockMode::IS: return "IS";
    case LockMode::U: return "U";
    case LockMode::SIX: return "SIX";
    case LockMode::NS: return "NS";
  }
  throw InternalError("unreachable lock mode");
}

std::string_view to_string(LockObjectType t) {
  switch (t) {
    case LockObjectType::PAGE: return "PAGE";
    case LockObjectType::TABLE: return "TABLE";
    case LockObjectType::CATALOG: return "CATALOG";
    case LockObjectType::VARIATION: return "VARIATION";
    case LockObjectType::PLAN: return "PLAN";
    case LockObjectType::SEQUENCE: return "SEQUENCE";
    case LockObjectType::INTERNAL: return "INTERNAL";
    case LockObjectType::TABLESPACE: return "TABLESPACE";
  }
  throw InternalError("unreachable lock object type");
}

LockMode parse_lock_mode(std::string_view s) {
  if (s == "S") return LockMode::S;
  if (s == "X") return LockMode::X;
  if (s == "IX") return LockMode::IX;
  if (s == "IS") return LockMode::IS;
  if (s == "U") return LockMode::U;
  if (s == "SIX") return LockMode::SIX;
  if (s == "NS") return LockMode::NS;
  throw DataError("unknown lock mode '" + std::string(s) + "'");
}

LockObjectType parse_object_type(std::string_view s) {
  for (auto t : kAllObjectTypes)
    if (s == to_string(t)) return t;
  throw DataError("unknown lock object type '" + std::string(s) + "'");
}

void validate_event(const LockEvent& e) {
  if (e.end_ns < e.start_ns)
    throw DataError("lock '" + e.lock_id + "': end before start");
  if (e.obj == LockObjectType::PAGE) {
    if (!e.page.has_value()) throw DataError("lock '" + e.lock_id + "': PAGE lock without page id");
    if (e.table.empty()) throw DataError("lock '" + e.lock_id + "': PAGE lock without table");
  } else if (e.obj == LockObjectType::TABLE) {
    if (e.page.has_value()) throw DataError("lock '" + e.lock_id + "': TABLE lock carries a page id");
    if (e.table.empty()) throw DataError("lock '" + e.lock_id + "': TABLE lock without table");
  } else if (e.page.has_value()) {
    throw DataError("lock '" + e.lock_id + "': page id on non-PAGE lock");
  }
}

std::string DistributionReport::to_text() const {
  std::ostringstream os;
  os << "lock_type,record_count,percentage\n";
  for (const auto& entry : entries) {
    os << to_string(entry.type) << "," << entry.count << "," << format_f6(entry.percentage)
       << "\n";
  }
  os << "TOTAL," << total << "," << format_f6(total > 0 ? 100.0 : 0.0) << "\n";
  if (empty_input) os << "# flagged: empty input stream\n";
  return os.str();
}

namespace ingest {

using nlohmann::json;

namespace {

std::string err_at(size_t line_no, const std::string& what) {
  if (line_no == 0) return what;
  return "line " + std::to_string(line_no) + ": " + what;
}

uint64_t require_u64(const json& j, const char* field, size_t line_no) {
  if (!j.contains(field)) throw DataError(err_at(line_no, std::string("missing field '") + field + "'"));
  const auto& v = j.at(field);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0))
    throw DataError(err_at(line_no, std::string("field '") + field + "' is not an unsigned integer"));
  return v.get<uint64_t>();
}

std::string require_string(const json& j, const char* field, size_t line_no) {
  if (!j.contains(field)) throw DataError(err_at(line_no, std::string("missing field '") + field + "'"));
  const auto& v = j.at(field);
  if (!v.is_string()) throw DataError(err_at(line_no, std::string("field '") + field + "' is not a string"));
  return v.get<std::string>();
}

}  // namespace

LockEvent parse_canonical_line(const std::string& line, size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(err_at(line_no, std::string("malformed record: ") + e.what()));
  }
  if (!j.is_object()) throw DataError(err_at(line_no, "record is not an object"));

  LockEvent ev;
  ev.lock_id = require_string(j, "lock_id", line_no);
  ev.start_ns = require_u64(j, "start_ns", line_no);
  ev.end_ns = require_u64(j, "end_ns", line_no);
  try {
    ev.mode = parse_lock_mode(require_string(j, "mode", line_no));
    ev.obj = parse_object_type(require_string(j, "obj", line_no));
  } catch (const DataError& e) {
    throw DataError(err_at(line_no, e.what()));
  }
  ev.schema = require_string(j, "schema", line_no);
  ev.table = j.contains("table") ? require_string(j, "table", line_no) : std::string();
  if (j.contains("page")) ev.page = require_u64(j, "page", line_no);

  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known = {"lock_id", "start_ns", "end_ns", "mode",
                                                "obj",     "schema",   "table",  "page"};
    if (!known.count(key)) throw DataError(err_at(line_no, "unexpected field '" + key + "'"));
  }

  try {
    validate_event(ev);
  } catch (const DataError& e) {
    throw DataError(err_at(line_no, e.what()));
  }
  return ev;
}

std::string serialize_event(const LockEvent& e) {
  // Fixed key order keeps serialized streams byte-stable.
  std::ostringstream os;
  os << "{\"lock_id\":" << json(e.lock_id).dump() << ",\"start_ns\":" << e.start_ns
     << ",\"end_ns\":" << e.end_ns << ",\"mode\":\"" << to_string(e.mode) << "\",\"obj\":\""
     << to_string(e.obj) << "\",\"schema\":" << json(e.schema).dump()
     << ",\"table\":" << json(e.table).dump();
  if (e.page.has_value()) os << ",\"page\":" << *e.page;
  os << "}";
  return os.str();
}

void write_lockevents(const std::vector<LockEvent>& events, std::ostream& out) {
  for (const auto& e : events) out << serialize_event(e) << "\n";
}

void write_lockevents_file(const std::vector<LockEvent>& events, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_lockevents(events, out);
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::vector<LockEvent> read_lockevents_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<LockEvent> events;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    events.push_back(parse_canonical_line(line, line_no));
  }
  return events;
}

std::string ParseSummary::to_text() const {
  std::ostringstream os;
  os << "parsed=" << parsed << "\n"
     << "skipped=" << skipped << "\n"
     << "malformed=" << malformed << "\n"
     << "unmatched_requests=" << unmatched_requests << "\n"
     << "orphan_releases=" << orphan_releases << "\n"
     << "total_lines=" << total_lines << "\n";
  return os.str();
}

namespace {

// Splits "key=value"; returns false when the token has no '='.
bool split_kv(std::string_view tok, std::string_view& key, std::string_view& val) {
  const auto eq = tok.find('=');
  if (eq == std::string_view::npos) return false;
  key = tok.substr(0, eq);
  val = tok.substr(eq + 1);
  return true;
}

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> toks;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

bool parse_u64(std::string_view s, uint64_t& out) {
  if (s.empty()) return false;
  uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<uint64_t>(c - '0');
  }
  out = v;
  return true;
}

}  // namespace

std::optional<RawFragment> parse_raw_db2_line(const std::string& line, size_t line_no) {
  const auto toks = tokenize(line);
  if (toks.size() < 2) return std::nullopt;

  uint64_t ts = 0;
  if (!parse_u64(toks[0], ts)) return std::nullopt;
  const std::string_view fn = toks[1];
  if (fn != "sqlplrq" && fn != "sqlplrl" && fn != "sqlplrem") return std::nullopt;

  RawFragment frag;
  frag.timestamp_ns = ts;
  std::string mode_str, obj_str;
  bool have_lock = false, have_mode = false, have_obj = false, have_schema = false;
  for (size_t i = 2; i < toks.size(); ++i) {
    std::string_view key, val;
    if (!split_kv(toks[i], key, val))
      throw DataError(err_at(line_no, "malformed token '" + std::string(toks[i]) + "'"));
    if (key == "lock") {
      frag.partial.lock_id = std::string(val);
      have_lock = true;
    } else if (key == "mode") {
      mode_str = std::string(val);
      have_mode = true;
    } else if (key == "obj") {
      obj_str = std::string(val);
      have_obj = true;
    } else if (key == "schema") {
      frag.partial.schema = std::string(val);
      have_schema = true;
    } else if (key == "table") {
      frag.partial.table = std::string(val);
    } else if (key == "page") {
      uint64_t p = 0;
      if (!parse_u64(val, p)) throw DataError(err_at(line_no, "field 'page' is not an unsigned integer"));
      frag.partial.page = p;
    } else {
      throw DataError(err_at(line_no, "unexpected field '" + std::string(key) + "'"));
    }
  }
  if (!have_lock) throw DataError(err_at(line_no, "missing field 'lock'"));

  if (fn == "sqlplrq") {
    frag.kind = RawFragment::Kind::Request;
    if (!have_mode) throw DataError(err_at(line_no, "missing field 'mode'"));
    if (!have_obj) throw DataError(err_at(line_no, "missing field 'obj'"));
    if (!have_schema) throw DataError(err_at(line_no, "missing field 'schema'"));
    try {
      frag.partial.mode = parse_lock_mode(mode_str);
      frag.partial.obj = parse_object_type(obj_str);
    } catch (const DataError& e) {
      throw DataError(err_at(line_no, e.what()));
    }
    frag.partial.start_ns = ts;
    frag.partial.end_ns = ts;
  } else {
    frag.kind = RawFragment::Kind::Release;
  }
  return frag;
}

void RawPairing::feed(const RawFragment& frag) {
  last_timestamp_ = std::max(last_timestamp_, frag.timestamp_ns);
  if (frag.kind == RawFragment::Kind::Request) {
    open_.emplace_back(frag.partial.lock_id, frag.partial);
    return;
  }
  auto it = std::find_if(open_.begin(), open_.end(),
                         [&](const auto& p) { return p.first == frag.partial.lock_id; });
  if (it == open_.end()) {
    ++summary_.orphan_releases;
    return;
  }
  LockEvent ev = it->second;
  ev.end_ns = std::max(ev.start_ns, frag.timestamp_ns);
  validate_event(ev);
  done_.push_back(std::move(ev));
  ++summary_.parsed;
  open_.erase(it);
}

void RawPairing::feed_line(const std::string& line, size_t line_no) {
  ++summary_.total_lines;
  std::optional<RawFragment> frag;
  try {
    frag = parse_raw_db2_line(line, line_no);
  } catch (const DataError&) {
    ++summary_.malformed;
    return;
  }
  if (!frag.has_value()) {
    ++summary_.skipped;
    return;
  }
  feed(*frag);
}

std::vector<LockEvent> RawPairing::finish() {
  for (auto& [id, ev] : open_) {
    ev.end_ns = std::max(ev.start_ns, last_timestamp_);
    validate_event(ev);
    done_.push_back(std::move(ev));
    ++summary_.unmatched_requests;
    ++summary_.parsed;
  }
  open_.clear();
  return std::move(done_);
}

std::vector<LockEvent> parse_raw_trace(std::istream& in, ParseSummary& summary) {
  RawPairing pairing;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    pairing.feed_line(line, line_no);
  }
  auto events = pairing.finish();
  summary = pairing.summary();
  return events;
}

std::vector<LockEvent> filter_events(const std::vector<LockEvent>& events,
                                     const std::set<LockObjectType>& keep_objs,
                                     const std::set<std::string>& excluded_schemas) {
  std::vector<LockEvent> out;
  out.reserve(events.size());
  for (const auto& e : events)
    if (keep_objs.count(e.obj) && !excluded_schemas.count(e.schema)) out.push_back(e);
  return out;
}

std::vector<LockEvent> sort_chronological(std::vector<LockEvent> events) {
  std::sort(events.begin(), events.end(), [](const LockEvent& a, const LockEvent& b) {
    if (a.start_ns != b.start_ns) return a.start_ns < b.start_ns;
    if (a.end_ns != b.end_ns) return a.end_ns < b.end_ns;
    return a.lock_id < b.lock_id;
  });
  return events;
}

DistributionReport lock_type_distribution(const std::vector<LockEvent>& events) {
  DistributionReport report;
  std::array<uint64_t, kAllObjectTypes.size()> counts{};
  for (const auto& e : events) ++counts[static_cast<size_t>(e.obj)];
  report.total = events.size();
  report.empty_input = events.empty();
  for (auto t : kAllObjectTypes) {
    DistributionEntry entry;
    entry.type = t;
    entry.count = counts[static_cast<size_t>(t)];
    entry.percentage =
        report.total > 0 ? 100.0 * static_cast<double>(entry.count) / static_cast<double>(report.total)
                         : 0.0;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace ingest
}  // namespace lockseer
