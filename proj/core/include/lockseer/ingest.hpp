#pragma once

#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "lockseer/events.hpp"

namespace lockseer::ingest {

// Canonical event format: UTF-8, one JSON object per line, keys exactly
// {lock_id, start_ns, end_ns, mode, obj, schema, table, page}; `page` is
// omitted for non-PAGE events. File extension `.lockevents`.
LockEvent parse_canonical_line(const std::string& line, size_t line_no = 0);
std::string serialize_event(const LockEvent& e);

void write_lockevents(const std::vector<LockEvent>& events, std::ostream& out);
void write_lockevents_file(const std::vector<LockEvent>& events, const std::string& path);
std::vector<LockEvent> read_lockevents_file(const std::string& path);

struct ParseSummary {
  uint64_t parsed = 0;             // complete events produced
  uint64_t skipped = 0;            // lines that matched no record form
  uint64_t malformed = 0;          // lines that matched a form but failed to parse
  uint64_t unmatched_requests = 0; // requests closed at end-of-stream
  uint64_t orphan_releases = 0;    // releases with no open request
  uint64_t total_lines = 0;

  std::string to_text() const;
};

// Raw-trace reference grammar (one record per line; unrelated lines are legal):
//   <ns> sqlplrq lock=<id> mode=<MODE> obj=<OBJ> schema=<S> [table=<T>] [page=<N>]
//   <ns> sqlplrl lock=<id>
//   <ns> sqlplrem lock=<id>
// sqlplrl (release) and sqlplrem (removal) both close an open request.
struct RawFragment {
  enum class Kind { Request, Release } kind;
  uint64_t timestamp_ns = 0;
  LockEvent partial;  // populated for requests; lock_id only for releases
};

std::optional<RawFragment> parse_raw_db2_line(const std::string& line, size_t line_no = 0);

// Pairs request/release fragments by lock_id. Unmatched requests at
// end-of-stream become events with end_ns = last observed timestamp.
class RawPairing {
public:
  void feed(const RawFragment& frag);
  void feed_line(const std::string& line, size_t line_no = 0);
  std::vector<LockEvent> finish();

  const ParseSummary& summary() const { return summary_; }
  ParseSummary& summary() { return summary_; }

private:
  std::vector<LockEvent> done_;
  std::vector<std::pair<std::string, LockEvent>> open_;  // insertion order
  uint64_t last_timestamp_ = 0;
  ParseSummary summary_;
};

std::vector<LockEvent> parse_raw_trace(std::istream& in, ParseSummary& summary);

// Keeps events with obj in keep_objs and schema not in excluded_schemas,
// preserving input order. Defaults follow the table/page focus with the
// SYSIBM system schema removed.
std::vector<LockEvent> filter_events(
    const std::vector<LockEvent>& events,
    const std::set<LockObjectType>& keep_objs = {LockObjectType::TABLE, LockObjectType::PAGE},
    const std::set<std::string>& excluded_schemas = {"SYSIBM"});

// Non-decreasing start_ns; ties broken by (end_ns, lock_id) for determinism.
std::vector<LockEvent> sort_chronological(std::vector<LockEvent> events);

DistributionReport lock_type_distribution(const std::vector<LockEvent>& events);

}  // namespace lockseer::ingest
