#pragma once

#include <functional>
#include <span>

#include "steamrec/model.hpp"
#include "steamrec/optim.hpp"

namespace steamrec {

// Which self-supervision tasks the run trains on. dc_only corrupts with
// noise insertions only (the model learns to delete); ic_only corrupts with
// deletions only (the model learns to insert); recommender_only drops the
// corrector entirely and masks raw sequences alone.
enum class Variant { full, dc_only, ic_only, recommender_only };

const char* variant_name(Variant v);

struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  double learning_rate = 0.001;
  double clip_lo = -5.0;
  double clip_hi = 5.0;
  uint64_t seed = 42;
  Variant variant = Variant::full;
  OpSet op_set = OpSet::full;

  // op_set restrictions are inference-time variants of the full model;
  // combining them with a restricted training variant is rejected.
  void validate() const;
};

struct LossBreakdown {
  double op_term = 0.0;
  double insert_term = 0.0;
  double raw_mask_term = 0.0;
  double corrected_mask_term = 0.0;
};

struct LossReport {
  double l1 = 0.0;
  double l2 = 0.0;
  double l = 0.0;  // always l1 + l2, summed once here
  LossBreakdown parts;
  int sequences = 0;
};

// Per-sequence corrector loss on an existing tape: operation cross entropy
// over every position of the modified sequence plus teacher-forced
// generator cross entropy over each inserted target including its eos step.
// Uses one shared encoding of the modified sequence. Returns a 1x1 node.
NodeId corrector_loss_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                              const Vocabulary& vocab, const CorruptionSample& sample,
                              const ForwardOptions& opts, LossBreakdown* parts);

// Per-sequence recommender loss: masked-prediction cross entropy over the
// raw sample and, when present, the corrected sample.
NodeId recommender_loss_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                const Vocabulary& vocab, const MaskedSample* raw_masked,
                                const MaskedSample* corrected_masked,
                                const ForwardOptions& opts, LossBreakdown* parts);

// Standalone loss evaluation: scalar plus gradients aligned with
// ModelParameters::entries() (zeros for untouched tensors).
struct LossWithGrads {
  double value = 0.0;
  LossBreakdown parts;
  std::vector<Matrix> grads;
};

LossWithGrads corrector_loss(const CorruptionSample& sample, const ModelParameters& params,
                             const ModelConfig& cfg, const Vocabulary& vocab,
                             const ForwardOptions& opts = {});
LossWithGrads recommender_loss(const MaskedSample* raw_masked,
                               const MaskedSample* corrected_masked,
                               const ModelParameters& params, const ModelConfig& cfg,
                               const Vocabulary& vocab, const ForwardOptions& opts = {});

// Rebalances the corruption draw for restricted variants: dc_only zeroes
// p_delete, ic_only zeroes p_insert; the removed mass is redistributed
// proportionally over the remaining operations.
CorruptionConfig variant_corruption(const CorruptionConfig& cfg, Variant v);

// Per-sample stream seed: hash(global seed, user, epoch).
uint64_t sample_seed(uint64_t global_seed, int user_index, int epoch);

struct TrainBatchItem {
  const std::vector<int>* sequence = nullptr;
  int user_index = 0;
};

// One optimizer step over a batch: per sequence draw a corruption, correct
// the raw sequence with the current parameters (inference mode, treated as
// constant data), mask raw and corrected, then sum L1 + L2 with dropout
// active, average gradients over the batch, clip, and apply Adam. Batch
// assembly may run on worker threads; gradients and the update are
// computed on the calling thread.
LossReport train_step(std::span<const TrainBatchItem> batch, int epoch, ModelParameters& params,
                      OptimizerState& opt, const ModelConfig& mcfg,
                      const CorruptionConfig& ccfg, const TrainConfig& tcfg,
                      const Vocabulary& vocab);

struct EpochMetrics {
  int epoch = 0;
  double l1 = 0.0, l2 = 0.0, l = 0.0;
  double val_hr10 = 0.0;
  double seconds = 0.0;
};

// Called after every epoch with the metrics, the current parameters, and
// whether this epoch set a new best validation HR@10.
using EpochCallback = std::function<void(const EpochMetrics&, const ModelParameters&, bool)>;

struct TrainResult {
  std::vector<EpochMetrics> log;
  int best_epoch = 0;        // 1-based; 0 until the first epoch completes
  double best_val_hr10 = -1.0;
  ModelParameters best_params;
};

// Full training loop: seeded shuffle per epoch, train_step per batch,
// validation HR@10 per epoch (corrected-input scoring for corrector
// variants, raw for recommender_only), best-epoch retention.
TrainResult train(const Dataset& dataset, ModelParameters& params, const ModelConfig& mcfg,
                  const CorruptionConfig& ccfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch = {});

}  // namespace steamrec
