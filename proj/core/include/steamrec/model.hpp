#pragma once

#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steamrec/corruption.hpp"
#include "steamrec/data.hpp"
#include "steamrec/tape.hpp"

namespace steamrec {

struct ModelConfig {
  int embed_dim = 64;
  int heads = 1;
  int layers_encoder = 1;
  int layers_corrector = 1;
  int layers_recommender = 1;
  double dropout = 0.5;
  int max_raw_len = 50;
  int max_corrected_len = 60;
  int max_insert_decode = 5;
  // Must cover the longest encoded input: corrected length plus the appended
  // mask slot, with one row of headroom.
  int position_table_rows = 62;

  int ffn_dim() const { return 4 * embed_dim; }
  void validate() const;
};

// One transformer block's tensors. Weight matrices multiply from the right
// (x * W), so both attention and FFN weights are stored input-major.
struct BlockWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gain, ln1_bias;
  Matrix w1, b1, w2, b2;
  Matrix ln2_gain, ln2_bias;
};

// The full parameter set. Item and position embeddings are single instances
// shared by the encoder, the insertion generator, and the recommender; both
// output projections reuse item_embeddings.
struct ModelParameters {
  Matrix item_embeddings;      // total_rows x e
  Matrix position_embeddings;  // position_table_rows x e
  std::vector<BlockWeights> encoder;
  std::vector<BlockWeights> corrector;
  std::vector<BlockWeights> recommender;
  Matrix op_projection;  // 3 x e, rows ordered (keep, delete, insert)

  static ModelParameters init(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng);

  // Stable named traversal; the order defines optimizer-state and checkpoint
  // block layout.
  std::vector<std::pair<std::string, Matrix*>> entries();
  std::vector<std::pair<std::string, const Matrix*>> entries() const;
};

// Parameter leaves registered on one tape, mirroring ModelParameters.
struct ParamNodes {
  NodeId item_embeddings = -1;
  NodeId position_embeddings = -1;
  NodeId op_projection = -1;
  std::vector<BlockNodeIds> encoder, corrector, recommender;
  std::vector<NodeId> ordered;  // aligned with ModelParameters::entries()
};

ParamNodes register_params(Tape& tape, const ModelParameters& params);

struct ForwardOptions {
  bool dropout_active = false;
  Rng* rng = nullptr;  // required when dropout_active
};

// ---- tape-level forwards (training path) ----

// Embedding + position + dropout, then the bidirectional encoder stack.
// key_ok marks non-pad positions; pad positions are invisible as keys.
NodeId encode_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                      const Vocabulary& vocab, std::span<const int> ids,
                      const ForwardOptions& opts);
// h_e * W_op^T -> |seq| x 3 logits.
NodeId operation_logits_on_tape(Tape& t, const ParamNodes& p, NodeId h_e);
// Recommender stack from H^0_r = H_e, then shared-embedding projection:
// |seq| x total_rows logits.
NodeId recommender_logits_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                  NodeId h_e, const std::vector<uint8_t>& key_ok,
                                  const ForwardOptions& opts);
// Reverse-generator stack over [anchor + p_1; prefix embeddings + p_2..],
// causal attention, shared-embedding projection: (|prefix|+1) x total_rows.
NodeId generator_logits_on_tape(Tape& t, const ParamNodes& p, const ModelConfig& cfg,
                                const Vocabulary& vocab, NodeId anchor_row,
                                std::span<const int> prefix, const ForwardOptions& opts);

// ---- inference surface ----

Matrix encode(std::span<const int> seq, const ModelParameters& params, const ModelConfig& cfg,
              const Vocabulary& vocab, bool dropout_active = false, Rng* rng = nullptr);

// Per-position distribution over (keep, delete, insert).
Matrix predict_operations(const Matrix& h_e, const ModelParameters& params);

// Teacher-forced generator distributions; row n is the distribution of the
// (n+1)-th inserted item given the anchor and the first n prefix items.
Matrix generator_step_distributions(const Matrix& anchor_hidden, std::span<const int> prefix,
                                    const ModelParameters& params, const ModelConfig& cfg,
                                    const Vocabulary& vocab, bool dropout_active = false,
                                    Rng* rng = nullptr);

// Greedy decode until eos or max_insert_decode items; pad and mask rows are
// never emitted. Returns items in generation order (nearest-to-anchor
// first), eos excluded.
std::vector<int> decode_insertion(const Matrix& anchor_hidden, const ModelParameters& params,
                                  const ModelConfig& cfg, const Vocabulary& vocab);

// Per-position distributions over total_rows from the recommender stack.
Matrix recommend_distributions(const Matrix& h_e, const ModelParameters& params,
                               const ModelConfig& cfg, bool dropout_active = false,
                               Rng* rng = nullptr);

// Inference-time restriction of the operation argmax (Appendix-B style
// variants): the argmax runs over the permitted label subset only.
enum class OpSet { full, delete_keep, insert_keep };

const char* op_set_name(OpSet s);

struct CorrectionOptions {
  OpSet op_set = OpSet::full;
  // Test hook: forces every position's label, bypassing the argmax.
  std::optional<OpLabel> force_label;
};

struct CorrectionResult {
  std::vector<int> corrected;
  std::vector<OpLabel> labels;              // one per raw position
  std::vector<std::vector<int>> insertions; // generation order, per raw position
};

// One-pass correction: encode raw once, argmax a label per position, drop
// delete-labeled items, decode insertions and place them before their anchor
// in reversed generation order. Overflow beyond max_corrected_len drops the
// oldest items.
CorrectionResult correct_sequence(std::span<const int> raw, const ModelParameters& params,
                                  const ModelConfig& cfg, const Vocabulary& vocab,
                                  const CorrectionOptions& opts = {});

// Process-wide count of correct_sequence invocations (test observability).
std::atomic<uint64_t>& correction_call_counter();

// Appends the mask token, encodes, and reads the final-position recommender
// distribution restricted to `candidates` (real items only).
std::vector<double> next_item_scores(std::span<const int> seq, std::span<const int> candidates,
                                     const ModelParameters& params, const ModelConfig& cfg,
                                     const Vocabulary& vocab);

}  // namespace steamrec
