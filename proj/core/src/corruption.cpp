#include "steamrec/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace steamrec {

const char* op_label_name(OpLabel op) {
  switch (op) {
    case OpLabel::Keep: return "keep";
    case OpLabel::Delete: return "delete";
    case OpLabel::Insert: return "insert";
  }
  return "?";
}

void CorruptionConfig::validate() const {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(p_keep) || !in_unit(p_insert) || !in_unit(p_delete)) {
    throw ConfigError("corruption probabilities must lie in [0, 1]");
  }
  if (std::abs(p_keep + p_insert + p_delete - 1.0) > 1e-9) {
    throw ConfigError("corruption probabilities must sum to 1, got " +
                      std::to_string(p_keep + p_insert + p_delete));
  }
  if (!(p_mask > 0.0 && p_mask <= 1.0)) {
    throw ConfigError("mask probability must lie in (0, 1], got " + std::to_string(p_mask));
  }
  if (max_run < 1) {
    throw ConfigError("max_run must be >= 1, got " + std::to_string(max_run));
  }
}

namespace {

// Uniform item outside `exclude`. Rejection sampling covers the common case
// (tiny exclusion set); the dense fallback keeps pathological catalogs exact.
int draw_noise_item(const std::unordered_set<int>& exclude, const Vocabulary& vocab, Rng& rng) {
  const int outside = vocab.item_count - static_cast<int>(exclude.size());
  if (outside <= 0) {
    throw ContractError("no item outside the sequence to insert as noise");
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int id = 1 + rng.below(vocab.item_count);
    if (!exclude.count(id)) return id;
  }
  int skip = rng.below(outside);
  for (int id = 1; id <= vocab.item_count; ++id) {
    if (exclude.count(id)) continue;
    if (skip == 0) return id;
    --skip;
  }
  throw ContractError("noise item enumeration failed");
}

enum class Draw { Keep, Insert, Delete };

}  // namespace

CorruptionSample corrupt_sequence(std::span<const int> raw, const CorruptionConfig& cfg,
                                  const Vocabulary& vocab, Rng& rng) {
  cfg.validate();
  if (raw.size() < 2) {
    throw ContractError("corrupt_sequence requires at least 2 items, got " +
                        std::to_string(raw.size()));
  }
  std::unordered_set<int> raw_set;
  for (int id : raw) {
    if (!vocab.is_real(id)) {
      throw ContractError("corrupt_sequence: id " + std::to_string(id) + " is not a real item");
    }
    raw_set.insert(id);
  }

  CorruptionSample out;
  out.modified.reserve(raw.size() * 2);
  out.ops.reserve(raw.size() * 2);
  std::vector<int> pending;  // deleted run awaiting its anchor, raw order

  for (size_t t = 0; t < raw.size(); ++t) {
    const bool last = t + 1 == raw.size();
    Draw draw;
    if (last) {
      // The final item must survive so the run above always finds an anchor;
      // its draw renormalizes over keep and insert.
      const double p = cfg.p_keep + cfg.p_insert;
      draw = (p <= 0.0 || rng.uniform() * p < cfg.p_keep) ? Draw::Keep : Draw::Insert;
    } else {
      const double u = rng.uniform();
      if (u < cfg.p_keep) draw = Draw::Keep;
      else if (u < cfg.p_keep + cfg.p_insert) draw = Draw::Insert;
      else draw = Draw::Delete;
    }
    if (draw == Draw::Delete && static_cast<int>(pending.size()) >= cfg.max_run) {
      draw = Draw::Keep;  // run is capped; the item survives instead
    }
    if (draw == Draw::Delete) {
      pending.push_back(raw[t]);
      continue;
    }
    if (draw == Draw::Insert) {
      int n_noise = 1;
      while (n_noise < cfg.max_run && rng.uniform() < cfg.p_insert) ++n_noise;
      for (int j = 0; j < n_noise; ++j) {
        out.modified.push_back(draw_noise_item(raw_set, vocab, rng));
        out.ops.push_back(OpLabel::Delete);
      }
    }
    // The surviving item anchors any pending deletions.
    if (!pending.empty()) {
      std::vector<int> target(pending.rbegin(), pending.rend());  // nearest first
      target.push_back(vocab.eos_id());
      out.insert_targets.emplace(static_cast<int>(out.modified.size()), std::move(target));
      pending.clear();
      out.modified.push_back(raw[t]);
      out.ops.push_back(OpLabel::Insert);
    } else {
      out.modified.push_back(raw[t]);
      out.ops.push_back(OpLabel::Keep);
    }
  }
  // The last raw item always survives, so no run can be left dangling.
  return out;
}

CorruptionSample truncate_sample(CorruptionSample sample, int max_len) {
  if (max_len < 1) {
    throw ConfigError("truncate_sample needs max_len >= 1, got " + std::to_string(max_len));
  }
  const int n = static_cast<int>(sample.modified.size());
  if (n <= max_len) return sample;
  const int cut = n - max_len;
  sample.modified.erase(sample.modified.begin(), sample.modified.begin() + cut);
  sample.ops.erase(sample.ops.begin(), sample.ops.begin() + cut);
  std::map<int, std::vector<int>> kept;
  for (auto& [pos, target] : sample.insert_targets) {
    if (pos >= cut) kept.emplace(pos - cut, std::move(target));
  }
  sample.insert_targets = std::move(kept);
  return sample;
}

MaskedSample mask_sequence(std::span<const int> sequence, double p_mask,
                           const Vocabulary& vocab, Rng& rng) {
  if (sequence.empty()) throw ContractError("mask_sequence on an empty sequence");
  if (!(p_mask > 0.0 && p_mask <= 1.0)) {
    throw ConfigError("mask probability must lie in (0, 1], got " + std::to_string(p_mask));
  }
  for (int id : sequence) {
    if (id == vocab.mask_id()) {
      throw ContractError("mask_sequence input already contains the mask token");
    }
  }
  MaskedSample out;
  out.masked.assign(sequence.begin(), sequence.end());
  for (size_t t = 0; t < sequence.size(); ++t) {
    if (rng.uniform() < p_mask) {
      out.targets.emplace_back(static_cast<int>(t), sequence[t]);
      out.masked[t] = vocab.mask_id();
    }
  }
  if (out.targets.empty()) {
    const int t = rng.below(static_cast<int>(sequence.size()));
    out.targets.emplace_back(t, sequence[static_cast<size_t>(t)]);
    out.masked[static_cast<size_t>(t)] = vocab.mask_id();
  }
  return out;
}

std::vector<std::vector<int>> simulate_test_set(const std::vector<EvalInstance>& test,
                                                const Vocabulary& vocab, int max_len, Rng& rng,
                                                SimulateStats* stats) {
  constexpr double kKeep = 0.8;
  constexpr double kInsert = 0.1;
  constexpr int kMaxRun = 4;  // consecutive insertions stay below 5
  if (vocab.item_count < 1) throw ContractError("simulate_test_set needs a non-empty catalog");
  if (max_len < 1) {
    throw ConfigError("simulate_test_set needs max_len >= 1, got " + std::to_string(max_len));
  }
  std::vector<std::vector<int>> out;
  out.reserve(test.size());
  for (const EvalInstance& inst : test) {
    if (inst.input.empty()) throw ContractError("simulate_test_set: empty test input");
    std::vector<int> sim;
    sim.reserve(inst.input.size() + 4);
    for (size_t t = 0; t < inst.input.size(); ++t) {
      const bool last = t + 1 == inst.input.size();
      Draw draw;
      if (last) {
        const double p = kKeep + kInsert;
        draw = rng.uniform() * p < kKeep ? Draw::Keep : Draw::Insert;
      } else {
        const double u = rng.uniform();
        if (u < kKeep) draw = Draw::Keep;
        else if (u < kKeep + kInsert) draw = Draw::Insert;
        else draw = Draw::Delete;
      }
      if (stats) {
        if (draw == Draw::Keep) ++stats->keep;
        else if (draw == Draw::Insert) ++stats->insert;
        else ++stats->drop;
      }
      if (draw == Draw::Delete) continue;
      if (draw == Draw::Insert) {
        int n = 1;
        while (n < kMaxRun && rng.uniform() < kInsert) ++n;
        for (int j = 0; j < n; ++j) sim.push_back(1 + rng.below(vocab.item_count));
      }
      sim.push_back(inst.input[t]);
    }
    if (static_cast<int>(sim.size()) > max_len) {
      sim.erase(sim.begin(), sim.end() - max_len);
    }
    out.push_back(std::move(sim));
  }
  return out;
}

}  // namespace steamrec
