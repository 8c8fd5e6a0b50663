#include "steamrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

#include "steamrec/evaluation.hpp"
#include "steamrec/threading.hpp"

namespace steamrec {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::dc_only: return "dc_only";
    case Variant::ic_only: return "ic_only";
    case Variant::recommender_only: return "recommender_only";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (clip_lo > clip_hi) throw ConfigError("clip range is empty");
  if (op_set != OpSet::full && variant != Variant::full) {
    throw ConfigError(std::string("op_set ") + op_set_name(op_set) +
                      " requires variant full; got variant " + variant_name(variant));
  }
}

CorruptionConfig variant_corruption(const CorruptionConfig& cfg, Variant v) {
  CorruptionConfig out = cfg;
  if (v == Variant::dc_only) {
    const double rest = cfg.p_keep + cfg.p_insert;
    if (rest <= 0.0) throw ConfigError("dc_only leaves no probability mass for keep/insert");
    out.p_keep = cfg.p_keep / rest;
    out.p_insert = cfg.p_insert / rest;
    out.p_delete = 0.0;
  } else if (v == Variant::ic_only) {
    const double rest = cfg.p_keep + cfg.p_delete;
    if (rest <= 0.0) throw ConfigError("ic_only leaves no probability mass for keep/delete");
    out.p_keep = cfg.p_keep / rest;
    out.p_delete = cfg.p_delete / rest;
    out.p_insert = 0.0;
  }
  return out;
}

uint64_t sample_seed(uint64_t global_seed, int user_index, int epoch) {
  return Rng::mix(Rng::mix(global_seed, static_cast<uint64_t>(user_index)),
                  static_cast<uint64_t>(epoch));
}

NodeId corrector_loss_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                              const Vocabulary& vocab, const CorruptionSample& sample,
                              const ForwardOptions& opts, LossBreakdown* parts) {
  if (sample.modified.empty()) throw ContractError("corrector loss: empty modified sequence");
  if (sample.ops.size() != sample.modified.size()) {
    throw ContractError("corrector loss: " + std::to_string(sample.ops.size()) +
                        " labels for " + std::to_string(sample.modified.size()) + " positions");
  }
  NodeId h_e = encode_on_tape(t, p, cfg, vocab, sample.modified, opts);
  NodeId op_lp = t.row_log_softmax(operation_logits_on_tape(t, p, h_e));
  std::vector<std::pair<int, int>> op_picks;
  op_picks.reserve(sample.ops.size());
  for (size_t i = 0; i < sample.ops.size(); ++i) {
    op_picks.emplace_back(static_cast<int>(i), static_cast<int>(sample.ops[i]));
  }
  NodeId loss = t.scale(t.pick_sum(op_lp, std::move(op_picks)), -1.0);
  if (parts) parts->op_term += t.val(loss)(0, 0);

  double insert_total = 0.0;
  for (const auto& [pos, target] : sample.insert_targets) {
    if (pos < 0 || pos >= static_cast<int>(sample.modified.size())) {
      throw ContractError("corrector loss: insert anchor " + std::to_string(pos) +
                          " out of range");
    }
    if (target.empty() || target.back() != vocab.eos_id()) {
      throw ContractError("corrector loss: inserted target must end with eos");
    }
    if (sample.ops[static_cast<size_t>(pos)] != OpLabel::Insert) {
      throw ContractError("corrector loss: anchor " + std::to_string(pos) +
                          " is not insert-labeled");
    }
    NodeId anchor = t.slice_rows(h_e, pos, 1);
    const std::span<const int> prefix(target.data(), target.size() - 1);
    NodeId gen_lp =
        t.row_log_softmax(generator_logits_on_tape(t, p, cfg, vocab, anchor, prefix, opts));
    std::vector<std::pair<int, int>> picks;
    picks.reserve(target.size());
    for (size_t n = 0; n < target.size(); ++n) {
      picks.emplace_back(static_cast<int>(n), target[n]);
    }
    NodeId term = t.scale(t.pick_sum(gen_lp, std::move(picks)), -1.0);
    insert_total += t.val(term)(0, 0);
    loss = t.add(loss, term);
  }
  if (parts) parts->insert_term += insert_total;
  return loss;
}

namespace {

NodeId masked_nll_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                          const Vocabulary& vocab, const MaskedSample& ms,
                          const ForwardOptions& opts) {
  if (ms.targets.empty()) throw ContractError("masked sample has no targets");
  for (const auto& [pos, original] : ms.targets) {
    if (pos < 0 || pos >= static_cast<int>(ms.masked.size()) ||
        ms.masked[static_cast<size_t>(pos)] != vocab.mask_id()) {
      throw ContractError("masked sample: position " + std::to_string(pos) +
                          " does not hold the mask token");
    }
    (void)original;
  }
  NodeId h_e = encode_on_tape(t, p, cfg, vocab, ms.masked, opts);
  std::vector<uint8_t> key_ok(ms.masked.size(), 1);
  NodeId lp = t.row_log_softmax(recommender_logits_on_tape(t, p, cfg, h_e, key_ok, opts));
  std::vector<std::pair<int, int>> picks(ms.targets.begin(), ms.targets.end());
  return t.scale(t.pick_sum(lp, std::move(picks)), -1.0);
}

}  // namespace

NodeId recommender_loss_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                const Vocabulary& vocab, const MaskedSample* raw_masked,
                                const MaskedSample* corrected_masked,
                                const ForwardOptions& opts, LossBreakdown* parts) {
  if (raw_masked == nullptr) throw ContractError("recommender loss: raw sample is required");
  NodeId loss = masked_nll_on_tape(t, p, cfg, vocab, *raw_masked, opts);
  if (parts) parts->raw_mask_term += t.val(loss)(0, 0);
  if (corrected_masked != nullptr) {
    NodeId corr = masked_nll_on_tape(t, p, cfg, vocab, *corrected_masked, opts);
    if (parts) parts->corrected_mask_term += t.val(corr)(0, 0);
    loss = t.add(loss, corr);
  }
  return loss;
}

namespace {

std::vector<Matrix> collect_grads(const Tape& t, const ParamNodes& p,
                                  const ModelParameters& params) {
  std::vector<Matrix> out;
  const auto entries = params.entries();
  out.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const Matrix* g = t.grad(p.ordered[i]);
    out.push_back(g ? *g : Matrix::zeros(entries[i].second->rows, entries[i].second->cols));
  }
  return out;
}

}  // namespace

LossWithGrads corrector_loss(const CorruptionSample& sample, const ModelParameters& params,
                             const ModelConfig& cfg, const Vocabulary& vocab,
                             const ForwardOptions& opts) {
  Tape t;
  ParamNodes p = register_params(t, params);
  LossWithGrads out;
  NodeId loss = corrector_loss_on_tape(t, p, cfg, vocab, sample, opts, &out.parts);
  out.value = t.val(loss)(0, 0);
  t.backward(loss);
  out.grads = collect_grads(t, p, params);
  return out;
}

LossWithGrads recommender_loss(const MaskedSample* raw_masked,
                               const MaskedSample* corrected_masked,
                               const ModelParameters& params, const ModelConfig& cfg,
                               const Vocabulary& vocab, const ForwardOptions& opts) {
  Tape t;
  ParamNodes p = register_params(t, params);
  LossWithGrads out;
  NodeId loss =
      recommender_loss_on_tape(t, p, cfg, vocab, raw_masked, corrected_masked, opts, &out.parts);
  out.value = t.val(loss)(0, 0);
  t.backward(loss);
  out.grads = collect_grads(t, p, params);
  return out;
}

namespace {

struct AssembledSample {
  std::optional<CorruptionSample> corruption;
  std::optional<MaskedSample> raw_masked;
  std::optional<MaskedSample> corrected_masked;
  uint64_t forward_seed = 0;
};

}  // namespace

LossReport train_step(std::span<const TrainBatchItem> batch, int epoch, ModelParameters& params,
                      OptimizerState& opt, const ModelConfig& mcfg,
                      const CorruptionConfig& ccfg, const TrainConfig& tcfg,
                      const Vocabulary& vocab) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  tcfg.validate();
  mcfg.validate();
  const CorruptionConfig draw_cfg = variant_corruption(ccfg, tcfg.variant);
  draw_cfg.validate();

  // Batch assembly: corruption, correction, masking. Parameters are read-only
  // here, so worker threads with per-sample seeds keep results identical to a
  // serial run.
  std::vector<AssembledSample> assembled(batch.size());
  parallel_for(0, static_cast<int>(batch.size()), thread_budget(), [&](int i) {
    const TrainBatchItem& item = batch[static_cast<size_t>(i)];
    const std::vector<int>& raw = *item.sequence;
    AssembledSample& a = assembled[static_cast<size_t>(i)];
    Rng rng(sample_seed(tcfg.seed, item.user_index, epoch));
    if (tcfg.variant != Variant::recommender_only) {
      if (raw.size() >= 2) {
        // Insertion draws can outgrow the position table; clip to capacity.
        a.corruption =
            truncate_sample(corrupt_sequence(raw, draw_cfg, vocab, rng), mcfg.max_corrected_len);
      }
      CorrectionOptions copts;
      copts.op_set = tcfg.op_set;
      const CorrectionResult corr = correct_sequence(raw, params, mcfg, vocab, copts);
      a.raw_masked = mask_sequence(raw, draw_cfg.p_mask, vocab, rng);
      if (!corr.corrected.empty()) {
        a.corrected_masked = mask_sequence(corr.corrected, draw_cfg.p_mask, vocab, rng);
      }
    } else {
      a.raw_masked = mask_sequence(raw, draw_cfg.p_mask, vocab, rng);
    }
    a.forward_seed = rng.next_u64();
  });

  // Loss, backprop, and the optimizer update stay on this thread.
  const auto entries = params.entries();
  std::vector<Matrix> grad_sum;
  grad_sum.reserve(entries.size());
  for (const auto& [name, m] : entries) grad_sum.emplace_back(m->rows, m->cols);

  LossReport report;
  report.sequences = static_cast<int>(batch.size());
  double l1_sum = 0.0, l2_sum = 0.0;
  LossBreakdown parts_sum;
  for (const AssembledSample& a : assembled) {
    Tape t;
    ParamNodes p = register_params(t, params);
    Rng fwd_rng(a.forward_seed);
    ForwardOptions opts{true, &fwd_rng};
    NodeId total = -1;
    if (a.corruption) {
      NodeId l1 = corrector_loss_on_tape(t, p, mcfg, vocab, *a.corruption, opts, &parts_sum);
      l1_sum += t.val(l1)(0, 0);
      total = l1;
    }
    NodeId l2 = recommender_loss_on_tape(t, p, mcfg, vocab, &*a.raw_masked,
                                         a.corrected_masked ? &*a.corrected_masked : nullptr,
                                         opts, &parts_sum);
    l2_sum += t.val(l2)(0, 0);
    total = total < 0 ? l2 : t.add(total, l2);
    t.backward(total);
    for (size_t j = 0; j < grad_sum.size(); ++j) {
      const Matrix* g = t.grad(p.ordered[j]);
      if (!g) continue;
      Matrix& acc = grad_sum[j];
      for (size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += g->data[k];
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (Matrix& g : grad_sum) {
    for (double& x : g.data) x *= inv_b;
  }
  clip_gradients(grad_sum, tcfg.clip_lo, tcfg.clip_hi);

  opt.learning_rate = tcfg.learning_rate;
  std::vector<Matrix*> param_ptrs;
  param_ptrs.reserve(entries.size());
  for (const auto& [name, m] : entries) param_ptrs.push_back(m);
  adam_step(param_ptrs, grad_sum, opt);

  report.l1 = l1_sum * inv_b;
  report.l2 = l2_sum * inv_b;
  report.l = report.l1 + report.l2;
  report.parts.op_term = parts_sum.op_term * inv_b;
  report.parts.insert_term = parts_sum.insert_term * inv_b;
  report.parts.raw_mask_term = parts_sum.raw_mask_term * inv_b;
  report.parts.corrected_mask_term = parts_sum.corrected_mask_term * inv_b;
  return report;
}

namespace {

double validation_hr10(const ModelParameters& params, const ModelConfig& mcfg,
                       const Vocabulary& vocab, const std::vector<EvalInstance>& valid,
                       const TrainConfig& tcfg) {
  if (valid.empty()) return 0.0;
  EvaluateOptions opts;
  opts.mode = tcfg.variant == Variant::recommender_only ? EvalMode::raw : EvalMode::corrected;
  opts.op_set = tcfg.op_set;
  const EvalReport report = evaluate(params, mcfg, vocab, valid, opts);
  if (opts.mode == EvalMode::corrected && report.overall_c) return report.overall_c->hr10;
  return report.overall_r.hr10;
}

}  // namespace

TrainResult train(const Dataset& dataset, ModelParameters& params, const ModelConfig& mcfg,
                  const CorruptionConfig& ccfg, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch) {
  tcfg.validate();
  mcfg.validate();
  ccfg.validate();
  if (dataset.train.empty()) throw ContractError("train: dataset has no training sequences");

  TrainResult result;
  OptimizerState opt;
  opt.learning_rate = tcfg.learning_rate;

  std::vector<int> order(dataset.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng shuffle_rng(
        Rng::mix(Rng::mix(tcfg.seed, 0x73687566666c65ULL), static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = shuffle_rng.below(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double l1_sum = 0.0, l2_sum = 0.0;
    long seq_count = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(tcfg.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(tcfg.batch_size));
      std::vector<TrainBatchItem> batch;
      batch.reserve(end - at);
      for (size_t i = at; i < end; ++i) {
        const int row = order[i];
        batch.push_back(TrainBatchItem{&dataset.train[static_cast<size_t>(row)], row});
      }
      const LossReport r = train_step(batch, epoch, params, opt, mcfg, ccfg, tcfg,
                                      dataset.vocab);
      l1_sum += r.l1 * r.sequences;
      l2_sum += r.l2 * r.sequences;
      seq_count += r.sequences;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.l1 = seq_count ? l1_sum / static_cast<double>(seq_count) : 0.0;
    m.l2 = seq_count ? l2_sum / static_cast<double>(seq_count) : 0.0;
    m.l = m.l1 + m.l2;
    m.val_hr10 = validation_hr10(params, mcfg, dataset.vocab, dataset.valid, tcfg);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool is_best = m.val_hr10 > result.best_val_hr10;
    if (is_best) {
      result.best_val_hr10 = m.val_hr10;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m, params, is_best);
  }
  return result;
}

}  // namespace steamrec
