#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lockseer/common.hpp"

namespace lockseer {

// NS and SIX are accepted for forward compatibility; anything else is a
// parse error, never a silent default.
enum class LockMode { S, X, IX, IS, U, SIX, NS };

enum class LockObjectType { PAGE, TABLE, CATALOG, VARIATION, PLAN, SEQUENCE, INTERNAL, TABLESPACE };

inline constexpr std::array<LockObjectType, 8> kAllObjectTypes = {
    LockObjectType::PAGE,     LockObjectType::TABLE,    LockObjectType::CATALOG,
    LockObjectType::VARIATION, LockObjectType::PLAN,    LockObjectType::SEQUENCE,
    LockObjectType::INTERNAL, LockObjectType::TABLESPACE};

std::string_view to_string(LockMode m);
std::string_view to_string(LockObjectType t);
LockMode parse_lock_mode(std::string_view s);
LockObjectType parse_object_type(std::string_view s);

struct LockEvent {
  std::string lock_id;
  uint64_t start_ns = 0;
  uint64_t end_ns = 0;
  LockMode mode = LockMode::S;
  LockObjectType obj = LockObjectType::TABLE;
  std::string schema;
  std::string table;                 // empty iff obj carries no table
  std::optional<uint64_t> page;      // present iff obj == PAGE

  bool operator==(const LockEvent&) const = default;
};

// Throws DataError when a LockEvent violates its type invariants.
void validate_event(const LockEvent& e);

struct DistributionEntry {
  LockObjectType type;
  uint64_t count = 0;
  double percentage = 0.0;
};

struct DistributionReport {
  std::vector<DistributionEntry> entries;  // all eight types, fixed order
  uint64_t total = 0;
  bool empty_input = false;

  std::string to_text() const;
};

}  // namespace lockseer
