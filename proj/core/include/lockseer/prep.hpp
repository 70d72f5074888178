#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lockseer/events.hpp"

namespace lockseer::prep {

enum class Task { Table, PageGlobal, PageLocal };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);

// Ten quantile bins per table, fitted on training-portion page ids only.
struct BinSpec {
  std::string table;
  std::vector<uint64_t> boundaries;  // 9 nearest-rank quantile cut points
  bool degenerate = false;           // duplicate boundaries collapse bins

  int apply(uint64_t page_id) const;
};

BinSpec fit_bins(const std::string& table, std::vector<uint64_t> page_ids, int n_bins = 10);

class Vocabulary {
public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;

  Vocabulary() = default;
  // Tokens are sorted lexicographically before id assignment.
  static Vocabulary build(const std::vector<std::string>& tokens);

  int32_t encode(const std::string& token) const;  // unseen -> kUnk
  const std::string& decode(int32_t id) const;
  size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  uint64_t fingerprint() const;

  bool operator==(const Vocabulary&) const = default;

private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int32_t> token_to_id_;
};

struct SplitSegments {
  std::vector<LockEvent> train;
  std::vector<LockEvent> val;
  std::vector<LockEvent> test;
};

// Last 30% (by count) to test; last 20% of the remainder to val.
SplitSegments chronological_split(const std::vector<LockEvent>& events, double test_frac = 0.30,
                                  double val_frac_of_train = 0.20);

// Token string for one event under the task's encoding.
std::string event_token(const LockEvent& e, Task task,
                        const std::map<std::string, BinSpec>& binspecs);

// Token-id stream plus the per-event end times that anchor each position.
struct TokenStream {
  std::vector<int32_t> ids;
  std::vector<uint64_t> end_ns;
};

TokenStream encode_task(const std::vector<LockEvent>& events, Task task,
                        const std::map<std::string, BinSpec>& binspecs, const Vocabulary& vocab);

struct Example {
  std::vector<int32_t> window;    // length = dataset window, left-padded with PAD
  std::vector<int32_t> targets;   // 1..max_horizon ids, never PAD
  uint64_t anchor_end_ns = 0;     // end_ns of the last input event
};

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);

std::vector<Example> window_examples(const TokenStream& stream, int window = 25,
                                     int max_horizon = 4);

struct WindowedDataset {
  Task task = Task::Table;
  std::string local_table;  // set for Task::PageLocal
  int window = 25;
  int max_horizon = 4;
  Vocabulary vocab;
  std::map<std::string, BinSpec> binspecs;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;

  const std::vector<Example>& split(Split s) const;
};

struct DatasetOptions {
  int window = 25;
  int max_horizon = 4;
  double test_frac = 0.30;
  double val_frac_of_train = 0.20;
  std::string warehouse_table = "WAREHOUSE";  // excluded from page tasks
};

// Full pipeline: select task events, split chronologically, fit bins and
// vocabulary on train only, encode, and window each split separately.
WindowedDataset build_dataset(const std::vector<LockEvent>& sorted_events, Task task,
                              const std::string& local_table = "",
                              const DatasetOptions& options = {});

// Versioned little-endian container for datasets.
std::string serialize_dataset(const WindowedDataset& ds);
WindowedDataset deserialize_dataset(const std::string& bytes);
void write_dataset_file(const WindowedDataset& ds, const std::string& path);
WindowedDataset read_dataset_file(const std::string& path);

}  // namespace lockseer::prep
