// Microbenchmarks for the numeric kernels and the model's hot paths.
// Run: ./benchmarks/steamrec_bench --benchmark_min_time=0.2s

#include <benchmark/benchmark.h>

#include <vector>

#include "steamrec/corruption.hpp"
#include "steamrec/evaluation.hpp"
#include "steamrec/matrix.hpp"
#include "steamrec/model.hpp"
#include "steamrec/training.hpp"

namespace {

using namespace steamrec;

std::vector<int> random_sequence(int len, int item_count, Rng& rng) {
  std::vector<int> seq(len);
  for (int& id : seq) id = 1 + static_cast<int>(rng.below(item_count));
  return seq;
}

void bm_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Matrix a = xavier_uniform(n, n, rng);
  const Matrix b = xavier_uniform(n, n, rng);
  for (auto _ : state) {
    Matrix c = matmul(a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n) * n * n);
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);

void bm_encode(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  ModelConfig cfg;
  cfg.embed_dim = 64;
  Vocabulary vocab{1000};
  Rng rng(2);
  const ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  const std::vector<int> seq = random_sequence(len, vocab.item_count, rng);
  for (auto _ : state) {
    Matrix h = encode(seq, params, cfg, vocab);
    benchmark::DoNotOptimize(h.data.data());
  }
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(bm_encode)->Arg(10)->Arg(50);

void bm_corrector_loss_backward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  Vocabulary vocab{200};
  CorruptionConfig ccfg;
  Rng rng(3);
  const ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  const std::vector<int> raw = random_sequence(30, vocab.item_count, rng);
  const CorruptionSample sample = corrupt_sequence(raw, ccfg, vocab, rng);
  for (auto _ : state) {
    LossWithGrads lg = corrector_loss(sample, params, cfg, vocab);
    benchmark::DoNotOptimize(lg.value);
  }
}
BENCHMARK(bm_corrector_loss_backward);

void bm_recommender_loss_backward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  Vocabulary vocab{200};
  CorruptionConfig ccfg;
  Rng rng(4);
  const ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  const std::vector<int> raw = random_sequence(30, vocab.item_count, rng);
  const MaskedSample masked = mask_sequence(raw, ccfg.p_mask, vocab, rng);
  for (auto _ : state) {
    LossWithGrads lg = recommender_loss(&masked, nullptr, params, cfg, vocab);
    benchmark::DoNotOptimize(lg.value);
  }
}
BENCHMARK(bm_recommender_loss_backward);

void bm_train_step(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  ModelConfig cfg;
  cfg.embed_dim = 32;
  Vocabulary vocab{200};
  CorruptionConfig ccfg;
  TrainConfig tcfg;
  tcfg.batch_size = batch;
  Rng rng(5);
  ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  OptimizerState opt;
  std::vector<std::vector<int>> rows;
  for (int i = 0; i < batch; ++i) rows.push_back(random_sequence(30, vocab.item_count, rng));
  std::vector<TrainBatchItem> items;
  for (int i = 0; i < batch; ++i) items.push_back({&rows[i], i});
  for (auto _ : state) {
    LossReport rep = train_step(items, 1, params, opt, cfg, ccfg, tcfg, vocab);
    benchmark::DoNotOptimize(rep.l);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(bm_train_step)->Arg(8)->Arg(32);

void bm_corrupt_sequence(benchmark::State& state) {
  Vocabulary vocab{200};
  CorruptionConfig ccfg;
  Rng rng(6);
  const std::vector<int> raw = random_sequence(50, vocab.item_count, rng);
  for (auto _ : state) {
    CorruptionSample s = corrupt_sequence(raw, ccfg, vocab, rng);
    benchmark::DoNotOptimize(s.modified.data());
  }
  state.SetItemsProcessed(state.iterations() * 50);
}
BENCHMARK(bm_corrupt_sequence);

void bm_correct_sequence(benchmark::State& state) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  Vocabulary vocab{200};
  Rng rng(7);
  const ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  const std::vector<int> raw = random_sequence(50, vocab.item_count, rng);
  for (auto _ : state) {
    CorrectionResult res = correct_sequence(raw, params, cfg, vocab);
    benchmark::DoNotOptimize(res.corrected.data());
  }
  state.SetItemsProcessed(state.iterations() * 50);
}
BENCHMARK(bm_correct_sequence);

void bm_next_item_scores(benchmark::State& state) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  Vocabulary vocab{200};
  Rng rng(8);
  const ModelParameters params = ModelParameters::init(cfg, vocab, rng);
  const std::vector<int> seq = random_sequence(20, vocab.item_count, rng);
  std::vector<int> candidates(100);
  for (int i = 0; i < 100; ++i) candidates[i] = 1 + i;
  for (auto _ : state) {
    std::vector<double> scores = next_item_scores(seq, candidates, params, cfg, vocab);
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(bm_next_item_scores);

}  // namespace

BENCHMARK_MAIN();
