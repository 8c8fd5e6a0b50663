#include "steamrec/model.hpp"

#include <algorithm>
#include <cmath>

namespace steamrec {

void ModelConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1, got " + std::to_string(embed_dim));
  if (heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (heads != 1) {
    throw ConfigError("attention is single-head at full width; heads must be 1, got " +
                      std::to_string(heads));
  }
  if (layers_encoder < 1 || layers_corrector < 1 || layers_recommender < 1) {
    throw ConfigError("every stack needs at least one layer");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
  if (max_raw_len < 1) throw ConfigError("max_raw_len must be >= 1");
  if (max_corrected_len < max_raw_len) {
    throw ConfigError("max_corrected_len " + std::to_string(max_corrected_len) +
                      " smaller than max_raw_len " + std::to_string(max_raw_len));
  }
  if (max_insert_decode < 1) throw ConfigError("max_insert_decode must be >= 1");
  if (position_table_rows < max_corrected_len + 2) {
    throw ConfigError("position_table_rows " + std::to_string(position_table_rows) +
                      " must be >= max_corrected_len + 2 = " +
                      std::to_string(max_corrected_len + 2));
  }
}

const char* op_set_name(OpSet s) {
  switch (s) {
    case OpSet::full: return "full";
    case OpSet::delete_keep: return "delete_keep";
    case OpSet::insert_keep: return "insert_keep";
  }
  return "?";
}

namespace {

template <typename BlockT, typename Fn>
void visit_block(BlockT& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".wq", b.wq);
  fn(prefix + ".bq", b.bq);
  fn(prefix + ".wk", b.wk);
  fn(prefix + ".bk", b.bk);
  fn(prefix + ".wv", b.wv);
  fn(prefix + ".bv", b.bv);
  fn(prefix + ".wo", b.wo);
  fn(prefix + ".bo", b.bo);
  fn(prefix + ".ln1_gain", b.ln1_gain);
  fn(prefix + ".ln1_bias", b.ln1_bias);
  fn(prefix + ".w1", b.w1);
  fn(prefix + ".b1", b.b1);
  fn(prefix + ".w2", b.w2);
  fn(prefix + ".b2", b.b2);
  fn(prefix + ".ln2_gain", b.ln2_gain);
  fn(prefix + ".ln2_bias", b.ln2_bias);
}

template <typename ParamsT, typename Fn>
void visit_params(ParamsT& p, Fn&& fn) {
  fn("item_embeddings", p.item_embeddings);
  fn("position_embeddings", p.position_embeddings);
  for (size_t i = 0; i < p.encoder.size(); ++i) {
    visit_block(p.encoder[i], "encoder." + std::to_string(i), fn);
  }
  for (size_t i = 0; i < p.corrector.size(); ++i) {
    visit_block(p.corrector[i], "corrector." + std::to_string(i), fn);
  }
  for (size_t i = 0; i < p.recommender.size(); ++i) {
    visit_block(p.recommender[i], "recommender." + std::to_string(i), fn);
  }
  fn("op_projection", p.op_projection);
}

BlockWeights init_block(const ModelConfig& cfg, Rng& rng) {
  const int e = cfg.embed_dim;
  const int f = cfg.ffn_dim();
  BlockWeights b;
  b.wq = xavier_uniform(e, e, rng);
  b.bq = Matrix::zeros(1, e);
  b.wk = xavier_uniform(e, e, rng);
  b.bk = Matrix::zeros(1, e);
  b.wv = xavier_uniform(e, e, rng);
  b.bv = Matrix::zeros(1, e);
  b.wo = xavier_uniform(e, e, rng);
  b.bo = Matrix::zeros(1, e);
  b.ln1_gain = Matrix::full(1, e, 1.0);
  b.ln1_bias = Matrix::zeros(1, e);
  b.w1 = xavier_uniform(e, f, rng);
  b.b1 = Matrix::zeros(1, f);
  b.w2 = xavier_uniform(f, e, rng);
  b.b2 = Matrix::zeros(1, e);
  b.ln2_gain = Matrix::full(1, e, 1.0);
  b.ln2_bias = Matrix::zeros(1, e);
  return b;
}

}  // namespace

ModelParameters ModelParameters::init(const ModelConfig& cfg, const Vocabulary& vocab,
                                      Rng& rng) {
  cfg.validate();
  if (vocab.item_count < 1) throw ConfigError("vocabulary has no items");
  ModelParameters p;
  p.item_embeddings = xavier_uniform(vocab.total_rows(), cfg.embed_dim, rng);
  p.position_embeddings = xavier_uniform(cfg.position_table_rows, cfg.embed_dim, rng);
  for (int i = 0; i < cfg.layers_encoder; ++i) p.encoder.push_back(init_block(cfg, rng));
  for (int i = 0; i < cfg.layers_corrector; ++i) p.corrector.push_back(init_block(cfg, rng));
  for (int i = 0; i < cfg.layers_recommender; ++i) p.recommender.push_back(init_block(cfg, rng));
  p.op_projection = xavier_uniform(3, cfg.embed_dim, rng);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParameters::entries() {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit_params(*this, [&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParameters::entries() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  visit_params(*this,
               [&](const std::string& name, const Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

ParamNodes register_params(Tape& tape, const ModelParameters& params) {
  ParamNodes n;
  const auto reg_block = [&](const BlockWeights& b) {
    BlockNodeIds ids;
    ids.wq = tape.leaf(b.wq);
    n.ordered.push_back(ids.wq);
    ids.bq = tape.leaf(b.bq);
    n.ordered.push_back(ids.bq);
    ids.wk = tape.leaf(b.wk);
    n.ordered.push_back(ids.wk);
    ids.bk = tape.leaf(b.bk);
    n.ordered.push_back(ids.bk);
    ids.wv = tape.leaf(b.wv);
    n.ordered.push_back(ids.wv);
    ids.bv = tape.leaf(b.bv);
    n.ordered.push_back(ids.bv);
    ids.wo = tape.leaf(b.wo);
    n.ordered.push_back(ids.wo);
    ids.bo = tape.leaf(b.bo);
    n.ordered.push_back(ids.bo);
    ids.ln1_gain = tape.leaf(b.ln1_gain);
    n.ordered.push_back(ids.ln1_gain);
    ids.ln1_bias = tape.leaf(b.ln1_bias);
    n.ordered.push_back(ids.ln1_bias);
    ids.w1 = tape.leaf(b.w1);
    n.ordered.push_back(ids.w1);
    ids.b1 = tape.leaf(b.b1);
    n.ordered.push_back(ids.b1);
    ids.w2 = tape.leaf(b.w2);
    n.ordered.push_back(ids.w2);
    ids.b2 = tape.leaf(b.b2);
    n.ordered.push_back(ids.b2);
    ids.ln2_gain = tape.leaf(b.ln2_gain);
    n.ordered.push_back(ids.ln2_gain);
    ids.ln2_bias = tape.leaf(b.ln2_bias);
    n.ordered.push_back(ids.ln2_bias);
    return ids;
  };
  n.item_embeddings = tape.leaf(params.item_embeddings);
  n.ordered.push_back(n.item_embeddings);
  n.position_embeddings = tape.leaf(params.position_embeddings);
  n.ordered.push_back(n.position_embeddings);
  for (const BlockWeights& b : params.encoder) n.encoder.push_back(reg_block(b));
  for (const BlockWeights& b : params.corrector) n.corrector.push_back(reg_block(b));
  for (const BlockWeights& b : params.recommender) n.recommender.push_back(reg_block(b));
  n.op_projection = tape.leaf(params.op_projection);
  n.ordered.push_back(n.op_projection);
  return n;
}

NodeId encode_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                      const Vocabulary& vocab, std::span<const int> ids,
                      const ForwardOptions& opts) {
  const int n = static_cast<int>(ids.size());
  if (n < 1) throw ContractError("encode: empty sequence");
  if (n > cfg.position_table_rows) {
    throw ContractError("encode: sequence length " + std::to_string(n) +
                        " exceeds position_table_rows " +
                        std::to_string(cfg.position_table_rows));
  }
  std::vector<uint8_t> key_ok(static_cast<size_t>(n));
  bool any_real = false;
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= vocab.total_rows()) {
      throw ContractError("encode: id " + std::to_string(ids[i]) +
                          " outside vocabulary with total_rows " +
                          std::to_string(vocab.total_rows()));
    }
    key_ok[static_cast<size_t>(i)] = ids[i] != vocab.pad_id() ? 1 : 0;
    any_real = any_real || key_ok[static_cast<size_t>(i)];
  }
  if (!any_real) throw ContractError("encode: all positions are padding");
  NodeId emb = t.embedding_rows(p.item_embeddings, std::vector<int>(ids.begin(), ids.end()));
  NodeId h = t.add(emb, t.slice_rows(p.position_embeddings, 0, n));
  Rng dummy(0);
  Rng& rng = opts.rng ? *opts.rng : dummy;
  if (opts.dropout_active && opts.rng == nullptr) {
    throw ContractError("encode: active dropout requires an rng");
  }
  h = t.dropout(h, cfg.dropout, rng, opts.dropout_active);
  const AttnMask mask = AttnMask::keys_visible(n, key_ok);
  for (const BlockNodeIds& blk : p.encoder) {
    h = transformer_block(t, h, blk, mask, cfg.dropout, opts.rng, opts.dropout_active);
  }
  return h;
}

NodeId operation_logits_on_tape(Tape& t, const ParamNodes& p, NodeId h_e) {
  return t.matmul_nt(h_e, p.op_projection);
}

NodeId recommender_logits_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                  NodeId h_e, const std::vector<uint8_t>& key_ok,
                                  const ForwardOptions& opts) {
  const int n = t.val(h_e).rows;
  if (static_cast<int>(key_ok.size()) != n) {
    throw ContractError("recommender: key mask size " + std::to_string(key_ok.size()) +
                        " does not match " + std::to_string(n) + " positions");
  }
  const AttnMask mask = AttnMask::keys_visible(n, key_ok);
  NodeId h = h_e;
  for (const BlockNodeIds& blk : p.recommender) {
    h = transformer_block(t, h, blk, mask, cfg.dropout, opts.rng, opts.dropout_active);
  }
  return t.matmul_nt(h, p.item_embeddings);
}

NodeId generator_logits_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                const Vocabulary& vocab, NodeId anchor_row,
                                std::span<const int> prefix, const ForwardOptions& opts) {
  const int m = static_cast<int>(prefix.size());
  if (m > cfg.max_insert_decode) {
    throw ContractError("generator: prefix length " + std::to_string(m) +
                        " exceeds max_insert_decode " + std::to_string(cfg.max_insert_decode));
  }
  const Matrix& anchor = t.val(anchor_row);
  if (anchor.rows != 1) {
    throw ShapeError("generator: anchor must be a single row, got " + anchor.shape_str());
  }
  for (int id : prefix) {
    if (id < 0 || id >= vocab.total_rows()) {
      throw ContractError("generator: prefix id " + std::to_string(id) + " outside vocabulary");
    }
  }
  NodeId h0 = t.add(anchor_row, t.slice_rows(p.position_embeddings, 0, 1));
  if (m > 0) {
    NodeId pe = t.add(t.embedding_rows(p.item_embeddings, std::vector<int>(prefix.begin(), prefix.end())),
                      t.slice_rows(p.position_embeddings, 1, m));
    h0 = t.concat_rows(h0, pe);
  }
  Rng dummy(0);
  Rng& rng = opts.rng ? *opts.rng : dummy;
  if (opts.dropout_active && opts.rng == nullptr) {
    throw ContractError("generator: active dropout requires an rng");
  }
  NodeId h = t.dropout(h0, cfg.dropout, rng, opts.dropout_active);
  const AttnMask mask = AttnMask::causal(m + 1);
  for (const BlockNodeIds& blk : p.corrector) {
    h = transformer_block(t, h, blk, mask, cfg.dropout, opts.rng, opts.dropout_active);
  }
  return t.matmul_nt(h, p.item_embeddings);
}

Matrix encode(std::span<const int> seq, const ModelParameters& params, const ModelConfig& cfg,
              const Vocabulary& vocab, bool dropout_active, Rng* rng) {
  Tape t;
  ParamNodes p = register_params(t, params);
  NodeId h = encode_on_tape(t, p, cfg, vocab, seq, ForwardOptions{dropout_active, rng});
  return t.val(h);
}

Matrix predict_operations(const Matrix& h_e, const ModelParameters& params) {
  return row_softmax(matmul_nt(h_e, params.op_projection));
}

Matrix generator_step_distributions(const Matrix& anchor_hidden, std::span<const int> prefix,
                                    const ModelParameters& params, const ModelConfig& cfg,
                                    const Vocabulary& vocab, bool dropout_active, Rng* rng) {
  Tape t;
  ParamNodes p = register_params(t, params);
  NodeId anchor = t.value(anchor_hidden);
  NodeId logits = generator_logits_on_tape(t, p, cfg, vocab, anchor, prefix,
                                           ForwardOptions{dropout_active, rng});
  return row_softmax(t.val(logits));
}

std::vector<int> decode_insertion(const Matrix& anchor_hidden, const ModelParameters& params,
                                  const ModelConfig& cfg, const Vocabulary& vocab) {
  std::vector<int> items;
  while (static_cast<int>(items.size()) < cfg.max_insert_decode) {
    const Matrix dist = generator_step_distributions(anchor_hidden, items, params, cfg, vocab);
    const int last = dist.rows - 1;
    int best = -1;
    double best_p = -1.0;
    for (int id = 0; id < dist.cols; ++id) {
      if (id == vocab.pad_id() || id == vocab.mask_id()) continue;
      const double pr = dist(last, id);
      if (pr > best_p) {
        best_p = pr;
        best = id;
      }
    }
    if (best == vocab.eos_id()) break;
    items.push_back(best);
  }
  return items;
}

Matrix recommend_distributions(const Matrix& h_e, const ModelParameters& params,
                               const ModelConfig& cfg, bool dropout_active, Rng* rng) {
  Tape t;
  ParamNodes p = register_params(t, params);
  NodeId h = t.value(h_e);
  std::vector<uint8_t> key_ok(static_cast<size_t>(h_e.rows), 1);
  NodeId logits =
      recommender_logits_on_tape(t, p, cfg, h, key_ok, ForwardOptions{dropout_active, rng});
  return row_softmax(t.val(logits));
}

std::atomic<uint64_t>& correction_call_counter() {
  static std::atomic<uint64_t> counter{0};
  return counter;
}

namespace {

OpLabel pick_label(const Matrix& dist, int row, OpSet op_set) {
  static constexpr OpLabel kAll[] = {OpLabel::Keep, OpLabel::Delete, OpLabel::Insert};
  OpLabel best = OpLabel::Keep;
  double best_p = -1.0;
  for (OpLabel op : kAll) {
    if (op_set == OpSet::delete_keep && op == OpLabel::Insert) continue;
    if (op_set == OpSet::insert_keep && op == OpLabel::Delete) continue;
    const double p = dist(row, static_cast<int>(op));
    if (p > best_p) {
      best_p = p;
      best = op;
    }
  }
  return best;
}

}  // namespace

CorrectionResult correct_sequence(std::span<const int> raw, const ModelParameters& params,
                                  const ModelConfig& cfg, const Vocabulary& vocab,
                                  const CorrectionOptions& opts) {
  correction_call_counter().fetch_add(1, std::memory_order_relaxed);
  if (raw.empty()) throw ContractError("correct_sequence: empty input");
  for (int id : raw) {
    if (!vocab.is_real(id)) {
      throw ContractError("correct_sequence: id " + std::to_string(id) + " is not a real item");
    }
  }
  const int n = static_cast<int>(raw.size());
  const Matrix h_e = encode(raw, params, cfg, vocab);
  const Matrix op_dist = predict_operations(h_e, params);

  CorrectionResult out;
  out.labels.resize(static_cast<size_t>(n));
  out.insertions.resize(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    out.labels[static_cast<size_t>(t)] =
        opts.force_label ? *opts.force_label : pick_label(op_dist, t, opts.op_set);
  }
  for (int t = 0; t < n; ++t) {
    if (out.labels[static_cast<size_t>(t)] != OpLabel::Insert) continue;
    Matrix anchor(1, h_e.cols);
    const double* src = h_e.row(t);
    for (int j = 0; j < h_e.cols; ++j) anchor(0, j) = src[j];
    out.insertions[static_cast<size_t>(t)] = decode_insertion(anchor, params, cfg, vocab);
  }
  for (int t = 0; t < n; ++t) {
    switch (out.labels[static_cast<size_t>(t)]) {
      case OpLabel::Delete:
        break;
      case OpLabel::Insert: {
        const std::vector<int>& gen = out.insertions[static_cast<size_t>(t)];
        // Generation runs nearest-to-anchor first, so placement reverses it.
        out.corrected.insert(out.corrected.end(), gen.rbegin(), gen.rend());
        out.corrected.push_back(raw[static_cast<size_t>(t)]);
        break;
      }
      case OpLabel::Keep:
        out.corrected.push_back(raw[static_cast<size_t>(t)]);
        break;
    }
  }
  if (static_cast<int>(out.corrected.size()) > cfg.max_corrected_len) {
    out.corrected.erase(out.corrected.begin(),
                        out.corrected.end() - cfg.max_corrected_len);
  }
  return out;
}

std::vector<double> next_item_scores(std::span<const int> seq, std::span<const int> candidates,
                                     const ModelParameters& params, const ModelConfig& cfg,
                                     const Vocabulary& vocab) {
  for (int id : candidates) {
    if (!vocab.is_real(id)) {
      throw ContractError("next_item_scores: candidate " + std::to_string(id) +
                          " is not a real item");
    }
  }
  std::vector<int> ids(seq.begin(), seq.end());
  ids.push_back(vocab.mask_id());
  Tape t;
  ParamNodes p = register_params(t, params);
  NodeId h_e = encode_on_tape(t, p, cfg, vocab, ids, ForwardOptions{});
  std::vector<uint8_t> key_ok(ids.size(), 1);
  NodeId logits = recommender_logits_on_tape(t, p, cfg, h_e, key_ok, ForwardOptions{});
  const Matrix& lg = t.val(logits);
  const int last = lg.rows - 1;
  // Softmax over the full vocabulary; scores are the candidates' raw
  // probabilities.
  const double* row = lg.row(last);
  double mx = row[0];
  for (int j = 1; j < lg.cols; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (int j = 0; j < lg.cols; ++j) sum += std::exp(row[j] - mx);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (int id : candidates) {
    scores.push_back(std::exp(row[id] - mx) / sum);
  }
  return scores;
}

}  // namespace steamrec
