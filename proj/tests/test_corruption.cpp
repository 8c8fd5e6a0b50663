#include <algorithm>
#include <set>

#include "doctest.h"
#include "steamrec/corruption.hpp"
#include "test_support.hpp"

using namespace steamrec;

TEST_SUITE("corruption") {

TEST_CASE("corruption config validation") {
  CorruptionConfig ok;
  CHECK_NOTHROW(ok.validate());
  CorruptionConfig bad = ok;
  bad.p_keep = 0.5;  // sum 1.1
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.p_mask = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.p_mask = 1.0;
  CHECK_NOTHROW(bad.validate());
  bad = ok;
  bad.max_run = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.p_delete = -0.1;
  bad.p_keep = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("corrupt_sequence round trips through its own labels") {
  const Vocabulary vocab{40};
  const CorruptionConfig cfg;
  Rng rng(2024);
  for (int rep = 0; rep < 1000; ++rep) {
    const int len = 2 + rng.below(49);
    const std::vector<int> raw = ts::random_real_sequence(vocab, len, rng);
    const CorruptionSample s = corrupt_sequence(raw, cfg, vocab, rng);
    REQUIRE(s.modified.size() == s.ops.size());
    CHECK(ts::apply_ops_round_trip(s, vocab) == raw);
  }
}

TEST_CASE("corruption structural invariants") {
  const Vocabulary vocab{40};
  const CorruptionConfig cfg;
  Rng rng(77);
  int saw_insert_target = 0, saw_noise = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    const int len = 2 + rng.below(30);
    const std::vector<int> raw = ts::random_real_sequence(vocab, len, rng);
    const std::set<int> raw_set(raw.begin(), raw.end());
    const CorruptionSample s = corrupt_sequence(raw, cfg, vocab, rng);

    REQUIRE_FALSE(s.modified.empty());
    CHECK(s.ops.back() != OpLabel::Delete);  // the last item always survives

    for (size_t i = 0; i < s.modified.size(); ++i) {
      CHECK(vocab.is_real(s.modified[i]));
      if (s.ops[i] == OpLabel::Delete) {
        // Delete labels mark injected noise, which is drawn outside the raw
        // item set.
        CHECK_FALSE(raw_set.contains(s.modified[i]));
        ++saw_noise;
      }
    }
    for (const auto& [pos, target] : s.insert_targets) {
      ++saw_insert_target;
      CHECK(s.ops[static_cast<size_t>(pos)] == OpLabel::Insert);
      REQUIRE_FALSE(target.empty());
      CHECK(target.back() == vocab.eos_id());
      CHECK(static_cast<int>(target.size()) - 1 <= cfg.max_run);
      CHECK(static_cast<int>(target.size()) - 1 >= 1);
      for (size_t j = 0; j + 1 < target.size(); ++j) CHECK(vocab.is_real(target[j]));
    }
    // Every insert label has a target and vice versa.
    for (size_t i = 0; i < s.ops.size(); ++i)
      if (s.ops[i] == OpLabel::Insert)
        CHECK(s.insert_targets.contains(static_cast<int>(i)));
  }
  CHECK(saw_insert_target > 1000);
  CHECK(saw_noise > 1000);
}

TEST_CASE("deleted runs never exceed max_run") {
  const Vocabulary vocab{60};
  CorruptionConfig cfg;
  cfg.p_keep = 0.05;
  cfg.p_insert = 0.05;
  cfg.p_delete = 0.9;  // force long runs
  Rng rng(31);
  for (int rep = 0; rep < 300; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 40, rng);
    const CorruptionSample s = corrupt_sequence(raw, cfg, vocab, rng);
    for (const auto& [pos, target] : s.insert_targets)
      CHECK(static_cast<int>(target.size()) - 1 <= cfg.max_run);
    CHECK(ts::apply_ops_round_trip(s, vocab) == raw);
  }
}

TEST_CASE("operation draw frequencies approach their probabilities") {
  const Vocabulary vocab{200};
  const CorruptionConfig cfg;  // keep 0.4 / insert 0.1 / delete 0.5
  Rng rng(9);
  long deleted = 0, original = 0, noise_runs = 0, sequences = 0;
  for (int rep = 0; rep < 3000; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 30, rng);
    const CorruptionSample s = corrupt_sequence(raw, cfg, vocab, rng);
    original += static_cast<long>(raw.size());
    long survivors = 0;
    for (OpLabel op : s.ops)
      if (op != OpLabel::Delete) ++survivors;
    deleted += static_cast<long>(raw.size()) - survivors;
    ++sequences;
    for (size_t i = 0; i < s.ops.size(); ++i) {
      if (s.ops[i] == OpLabel::Delete && (i == 0 || s.ops[i - 1] != OpLabel::Delete))
        ++noise_runs;
    }
  }
  // Run caps push the realized delete rate slightly under 0.5.
  const double delete_rate = static_cast<double>(deleted) / static_cast<double>(original);
  CHECK(delete_rate > 0.40);
  CHECK(delete_rate < 0.55);
  // Insert draws fire at ~0.1 per original item (29 eligible draws + last
  // item renormalized keep/insert).
  const double insert_rate =
      static_cast<double>(noise_runs) / static_cast<double>(original);
  CHECK(insert_rate > 0.07);
  CHECK(insert_rate < 0.16);
}

TEST_CASE("last item renormalizes keep versus insert") {
  const Vocabulary vocab{50};
  const CorruptionConfig cfg;  // keep 0.4 / insert 0.1 -> 0.8 / 0.2
  Rng rng(123);
  int keep = 0, insert = 0;
  for (int rep = 0; rep < 5000; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 2, rng);
    const CorruptionSample s = corrupt_sequence(raw, cfg, vocab, rng);
    // Delete labels mark noise only, and noise precedes the item that drew
    // the insert, so noise directly before the final original item means the
    // last draw was an insert. Skip samples where the first original was
    // removed; the skip is independent of the last draw, so the ratio stays
    // unbiased.
    if (std::find(s.modified.begin(), s.modified.end(), raw[0]) == s.modified.end()) continue;
    const size_t last = s.ops.size() - 1;
    const bool last_drew_insert = last > 0 && s.ops[last - 1] == OpLabel::Delete;
    if (last_drew_insert) ++insert;
    else ++keep;
  }
  const double rate = static_cast<double>(insert) / static_cast<double>(keep + insert);
  CHECK(rate > 0.16);
  CHECK(rate < 0.24);
}

TEST_CASE("corrupt_sequence rejects bad input") {
  const Vocabulary vocab{8};
  const CorruptionConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(corrupt_sequence(std::vector<int>{5}, cfg, vocab, rng), ContractError);
  CHECK_THROWS_AS(corrupt_sequence(std::vector<int>{1, 0}, cfg, vocab, rng), ContractError);
  CHECK_THROWS_AS(corrupt_sequence(std::vector<int>{1, 9}, cfg, vocab, rng), ContractError);
}

TEST_CASE("mask_sequence always yields at least one target") {
  const Vocabulary vocab{30};
  CorruptionConfig cfg;
  cfg.p_mask = 0.02;  // low rate: the forced-mask path fires often
  Rng rng(55);
  int forced_candidates = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 1 + rng.below(8), rng);
    const MaskedSample m = mask_sequence(raw, cfg.p_mask, vocab, rng);
    REQUIRE_FALSE(m.targets.empty());
    REQUIRE(m.masked.size() == raw.size());
    for (const auto& [pos, original] : m.targets) {
      CHECK(m.masked[static_cast<size_t>(pos)] == vocab.mask_id());
      CHECK(original == raw[static_cast<size_t>(pos)]);
    }
    // Non-target positions are untouched.
    std::set<int> masked_pos;
    for (const auto& [pos, original] : m.targets) masked_pos.insert(pos);
    for (size_t i = 0; i < raw.size(); ++i)
      if (!masked_pos.contains(static_cast<int>(i))) CHECK(m.masked[i] == raw[i]);
    if (m.targets.size() == 1) ++forced_candidates;
  }
  CHECK(forced_candidates > 1500);
}

TEST_CASE("mask_sequence rate approaches p_mask") {
  const Vocabulary vocab{30};
  const CorruptionConfig cfg;  // p_mask 0.5
  Rng rng(66);
  long masked = 0, total = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 20, rng);
    const MaskedSample m = mask_sequence(raw, cfg.p_mask, vocab, rng);
    masked += static_cast<long>(m.targets.size());
    total += 20;
  }
  const double rate = static_cast<double>(masked) / static_cast<double>(total);
  CHECK(rate > 0.46);
  CHECK(rate < 0.54);
}

TEST_CASE("mask_sequence rejects sequences containing the mask token") {
  const Vocabulary vocab{8};
  const CorruptionConfig cfg;
  Rng rng(2);
  CHECK_THROWS_AS(mask_sequence(std::vector<int>{1, vocab.mask_id()}, cfg.p_mask, vocab, rng),
                  ContractError);
}

TEST_CASE("simulate_test_set disturbs inputs but preserves instance structure") {
  const Vocabulary vocab{50};
  std::vector<EvalInstance> test;
  Rng gen(8);
  for (int i = 0; i < 400; ++i) {
    EvalInstance inst;
    inst.input = ts::random_real_sequence(vocab, 5 + gen.below(20), gen);
    inst.ground_truth = 1 + gen.below(50);
    inst.negatives = {1, 2, 3};
    test.push_back(inst);
  }
  Rng rng(99);
  SimulateStats stats;
  const auto sims = simulate_test_set(test, vocab, 50, rng, &stats);
  REQUIRE(sims.size() == test.size());

  Rng rng2(99);
  CHECK(simulate_test_set(test, vocab, 50, rng2) == sims);  // same seed, same output

  const long total = stats.keep + stats.insert + stats.drop;
  CHECK(static_cast<double>(stats.keep) / total == doctest::Approx(0.8).epsilon(0.05));
  CHECK(static_cast<double>(stats.insert) / total == doctest::Approx(0.1).epsilon(0.25));
  CHECK(static_cast<double>(stats.drop) / total == doctest::Approx(0.1).epsilon(0.25));

  bool some_changed = false;
  for (size_t i = 0; i < sims.size(); ++i) {
    REQUIRE_FALSE(sims[i].empty());
    for (int id : sims[i]) CHECK(vocab.is_real(id));
    some_changed |= sims[i] != test[i].input;
  }
  CHECK(some_changed);
}

TEST_CASE("simulate_test_set keeps disturbed inputs within max_len") {
  const Vocabulary vocab{50};
  std::vector<EvalInstance> test;
  Rng gen(12);
  for (int i = 0; i < 300; ++i) {
    EvalInstance inst;
    inst.input = ts::random_real_sequence(vocab, 20, gen);
    inst.ground_truth = 1 + gen.below(50);
    test.push_back(inst);
  }
  Rng rng(7);
  const auto sims = simulate_test_set(test, vocab, 20, rng, nullptr);
  bool clipped = false;
  for (size_t i = 0; i < sims.size(); ++i) {
    CHECK(sims[i].size() <= 20);
    // Insertions land before surviving items and the last item is never
    // deleted, so the final element always matches the real input.
    CHECK(sims[i].back() == test[i].input.back());
    clipped |= sims[i].size() == 20 && sims[i] != test[i].input;
  }
  CHECK(clipped);

  Rng rng3(7);
  CHECK_THROWS_AS(simulate_test_set(test, vocab, 0, rng3), ConfigError);
}

TEST_CASE("truncate_sample keeps the most recent positions and realigns targets") {
  CorruptionSample s;
  s.modified = {11, 12, 13, 14, 15, 16, 17, 18};
  s.ops = {OpLabel::Keep, OpLabel::Insert, OpLabel::Keep,    OpLabel::Delete,
           OpLabel::Keep, OpLabel::Keep,   OpLabel::Insert,  OpLabel::Keep};
  s.insert_targets[1] = {21, 22, 9};
  s.insert_targets[6] = {23, 9};

  const CorruptionSample same = truncate_sample(s, 8);
  CHECK(same.modified == s.modified);
  CHECK(same.ops == s.ops);
  CHECK(same.insert_targets == s.insert_targets);

  const CorruptionSample cut = truncate_sample(s, 4);
  CHECK(cut.modified == std::vector<int>{15, 16, 17, 18});
  REQUIRE(cut.ops.size() == 4);
  CHECK(cut.ops[2] == OpLabel::Insert);
  REQUIRE(cut.insert_targets.size() == 1);  // anchor 1 fell off with the prefix
  CHECK(cut.insert_targets.at(2) == std::vector<int>{23, 9});

  CHECK_THROWS_AS(truncate_sample(s, 0), ConfigError);
}

TEST_CASE("truncate_sample output is a suffix of the original sample") {
  const Vocabulary vocab{40};
  CorruptionConfig cfg;
  cfg.p_keep = 0.2;
  cfg.p_insert = 0.5;  // hot insertion draws overflow quickly
  cfg.p_delete = 0.3;
  Rng rng(31);
  int overflowed = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const std::vector<int> raw = ts::random_real_sequence(vocab, 2 + rng.below(30), rng);
    const CorruptionSample full = corrupt_sequence(raw, cfg, vocab, rng);
    const int max_len = 2 + rng.below(20);
    const CorruptionSample cut = truncate_sample(full, max_len);
    const int n = static_cast<int>(full.modified.size());
    const int kept = std::min(n, max_len);
    const int shift = n - kept;
    if (shift > 0) ++overflowed;
    REQUIRE(static_cast<int>(cut.modified.size()) == kept);
    for (int i = 0; i < kept; ++i) {
      CHECK(cut.modified[static_cast<size_t>(i)] == full.modified[static_cast<size_t>(i + shift)]);
      CHECK(cut.ops[static_cast<size_t>(i)] == full.ops[static_cast<size_t>(i + shift)]);
    }
    for (const auto& [pos, target] : cut.insert_targets) {
      CHECK(cut.ops[static_cast<size_t>(pos)] == OpLabel::Insert);
      CHECK(target == full.insert_targets.at(pos + shift));
    }
    // Every surviving insert label still carries its target.
    for (const auto& [pos, target] : full.insert_targets) {
      if (pos >= shift) CHECK(cut.insert_targets.contains(pos - shift));
    }
  }
  CHECK(overflowed > 100);
}

}  // TEST_SUITE
