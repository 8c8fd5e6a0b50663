#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "steamrec/errors.hpp"
#include "steamrec/rng.hpp"

namespace steamrec {

// Item-id layout shared by every component:
//   0            padding
//   1 .. n       real items (dense, in order of first appearance)
//   n + 1        mask token
//   n + 2        end-of-sequence token for the insertion generator
struct Vocabulary {
  int item_count = 0;

  int pad_id() const { return 0; }
  int mask_id() const { return item_count + 1; }
  int eos_id() const { return item_count + 2; }
  int total_rows() const { return item_count + 3; }
  bool is_real(int id) const { return id >= 1 && id <= item_count; }
};

struct Interaction {
  std::string user;
  std::string item;
  int64_t timestamp = 0;
};

// Parses `user<TAB>item<TAB>timestamp` lines. Blank lines and lines starting
// with '#' are skipped. Any other malformed line raises ParseError with its
// line number.
std::vector<Interaction> load_interactions(const std::filesystem::path& file);

// Repeatedly removes users and items with fewer than `min_count`
// interactions until both constraints hold simultaneously. Preserves the
// original record order.
std::vector<Interaction> five_core_filter(std::vector<Interaction> records, int min_count = 5);

struct SequenceData {
  Vocabulary vocab;
  std::vector<std::string> user_keys;              // dense user order
  std::vector<std::string> item_keys;              // item_keys[k] <-> dense id k+1
  std::vector<std::vector<int>> sequences;         // chronological, truncated
  std::vector<std::vector<int>> history;           // sorted distinct item ids, untruncated
  long action_count = 0;                           // interactions before truncation
};

// Orders each user's interactions by timestamp (stable: ties keep file
// order), maps raw keys to dense ids by first appearance, and keeps the most
// recent `max_len` actions per user.
SequenceData build_sequences(const std::vector<Interaction>& records, int max_len);

struct EvalInstance {
  std::vector<int> input;
  int ground_truth = 0;
  std::vector<int> negatives;
};

struct SplitResult {
  std::vector<std::vector<int>> train;  // sequence minus the last two actions
  std::vector<EvalInstance> valid;      // target: second-to-last action
  std::vector<EvalInstance> test;       // target: last action
  std::vector<int> user_index;          // row -> index into SequenceData
  int skipped = 0;                      // sequences shorter than 3
};

SplitResult leave_one_out_split(const std::vector<std::vector<int>>& sequences);

// Draws `count` distinct real items outside `history_sorted` (which must
// contain every item the user ever interacted with, ground truth included).
// Throws ConfigError when fewer than `count` items are eligible.
std::vector<int> sample_negatives(const std::vector<int>& history_sorted,
                                  const Vocabulary& vocab, int count, Rng& rng);

struct DatasetStats {
  int users = 0;
  int items = 0;
  long actions = 0;
  double avg_length = 0.0;
  double sparsity_percent = 0.0;  // 100 * (1 - actions / (users * items))
};

DatasetStats compute_stats(const SequenceData& data);
std::string format_stats(const DatasetStats& stats);

// On-disk dataset produced by `prepare` and consumed by every later stage.
struct Dataset {
  Vocabulary vocab;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::vector<std::vector<int>> train;
  std::vector<EvalInstance> valid;
  std::vector<EvalInstance> test;
  std::vector<std::vector<int>> simulated_inputs;  // aligned with test; may be empty

  bool has_simulated() const { return !simulated_inputs.empty(); }
};

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);
// Rewrites only the simulated-input file of an existing dataset directory.
void write_simulated_inputs(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace steamrec
