#pragma once

#include <map>
#include <span>
#include <vector>

#include "steamrec/data.hpp"
#include "steamrec/rng.hpp"

namespace steamrec {

// Item-wise operation. Values index the rows of the operation projection and
// the targets of the operation cross entropy, so the order is fixed.
enum class OpLabel : int { Keep = 0, Delete = 1, Insert = 2 };

const char* op_label_name(OpLabel op);

struct CorruptionConfig {
  // Per-item draw for building the modified sequence.
  double p_keep = 0.4;
  double p_insert = 0.1;
  double p_delete = 0.5;
  // Masking rate shared by both masked-prediction passes.
  double p_mask = 0.5;
  // Cap on consecutive deletions attached to one anchor and on noise items
  // appended per insertion draw.
  int max_run = 5;

  void validate() const;
};

// One training example for the corrector: the corrupted sequence, one
// operation label per position, and for every insert-labeled anchor the
// generator target (deleted run, nearest-to-anchor first, then eos).
struct CorruptionSample {
  std::vector<int> modified;
  std::vector<OpLabel> ops;
  std::map<int, std::vector<int>> insert_targets;  // position in `modified` -> target
};

// Corrupts a raw sequence for self-supervised training:
//   keep    item survives unchanged
//   insert  noise items (not in the raw sequence) are placed before the
//           item; each noise item is labeled Delete
//   delete  the item is removed; the run is reattached as the insertion
//           target of the next surviving item, which is labeled Insert
// The last raw item is never deleted (its draw renormalizes over
// keep/insert), so every deleted run has a surviving anchor.
// Requires raw.size() >= 2 and only real item ids.
CorruptionSample corrupt_sequence(std::span<const int> raw, const CorruptionConfig& cfg,
                                  const Vocabulary& vocab, Rng& rng);

// Keeps the most recent max_len positions of a sample. Labels move with their
// positions; insert targets anchored in the dropped prefix are discarded.
// Insertion draws can push the modified sequence past the encoder's position
// table, so training clips samples to the model's corrected-length capacity.
CorruptionSample truncate_sample(CorruptionSample sample, int max_len);

struct MaskedSample {
  std::vector<int> masked;
  std::vector<std::pair<int, int>> targets;  // (position, original id)
};

// Replaces each position independently with the mask token at rate p_mask.
// If no position is selected, one uniform position is forced so the sample
// always contributes to the loss.
MaskedSample mask_sequence(std::span<const int> sequence, double p_mask,
                           const Vocabulary& vocab, Rng& rng);

// Draw counters for simulate_test_set, used to audit operation frequencies.
struct SimulateStats {
  long keep = 0;
  long insert = 0;   // primary insertion draws (continuations not counted)
  long drop = 0;     // deletions
};

// Builds the robustness test set: each test input is independently disturbed
// with per-item keep 0.8 / insert 0.1 / delete 0.1. Inserted items are
// uniform over the full item set, consecutive insertions stay below 5, and
// the last input item is never deleted. Each output keeps at most its most
// recent max_len items so disturbed inputs still fit the model, matching the
// recency truncation applied when sequences are built. Targets and negatives
// are untouched.
std::vector<std::vector<int>> simulate_test_set(const std::vector<EvalInstance>& test,
                                                const Vocabulary& vocab, int max_len, Rng& rng,
                                                SimulateStats* stats = nullptr);

}  // namespace steamrec
