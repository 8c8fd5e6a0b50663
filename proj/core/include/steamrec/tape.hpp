#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "steamrec/matrix.hpp"
#include "steamrec/rng.hpp"

namespace steamrec {

using NodeId = int;

// Attention visibility mask: allowed(q, k) == true means query row q may
// attend to key row k. Additive masking with a large negative constant keeps
// every intermediate finite; exp() underflows blocked entries to exact zero.
struct AttnMask {
  int q_rows = 0;
  int k_rows = 0;
  std::vector<uint8_t> allowed;

  bool at(int q, int k) const { return allowed[static_cast<size_t>(q) * k_rows + k] != 0; }

  static AttnMask all(int q_rows, int k_rows);
  // Lower-triangular: row q sees keys 0..q.
  static AttnMask causal(int n);
  // Every query sees exactly the keys with key_ok[k] != 0 (bidirectional
  // attention over non-padding positions).
  static AttnMask keys_visible(int q_rows, const std::vector<uint8_t>& key_ok);
};

inline constexpr double kMaskFill = -1e30;

// Reverse-mode autodiff over dense matrices. Nodes are appended in forward
// order; backward() walks them in reverse, which is a topological order by
// construction. Gradients are allocated lazily, so subgraphs that do not
// feed the loss cost nothing on the way back.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers an externally owned parameter. The tape stores only a view;
  // `external` must outlive the tape.
  NodeId leaf(const Matrix& external);
  // Registers a tape-owned input value (e.g. a constant).
  NodeId value(Matrix v);

  const Matrix& val(NodeId id) const;
  // Gradient accumulated by backward(); nullptr if the node was never on a
  // path to the root.
  const Matrix* grad(NodeId id) const;
  size_t node_count() const { return nodes_.size(); }

  // Seeds the 1x1 root with 1 and propagates. May be called once per tape.
  void backward(NodeId root);

  // ---- primitive ops ----
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b);     // A * B
  NodeId matmul_nt(NodeId a, NodeId b);  // A * B^T
  // y(i, j) = x(i, j) + row(0, j); broadcasts a 1xC bias over rows.
  NodeId add_row(NodeId x, NodeId row);
  NodeId row_softmax(NodeId x);
  NodeId row_log_softmax(NodeId x);
  // Row-wise y = gain * (x - mean) / sqrt(var + eps) + bias, population
  // variance, eps = 1e-12. gain and bias are 1xC.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId gelu(NodeId x);  // exact erf form
  // Inverted dropout: scales survivors by 1/(1-rate) so inference needs no
  // rescaling. active=false (or rate 0) returns x unchanged.
  NodeId dropout(NodeId x, double rate, Rng& rng, bool active);
  // Gathers table rows by index; backward scatter-adds into the table.
  NodeId embedding_rows(NodeId table, std::vector<int> ids);
  NodeId slice_rows(NodeId x, int start, int count);
  NodeId concat_rows(NodeId top, NodeId bottom);
  // y = x where allowed, `fill` elsewhere.
  NodeId mask_fill(NodeId x, AttnMask mask, double fill);
  // 1x1 sum of the picked entries; picks are (row, col) pairs.
  NodeId pick_sum(NodeId x, std::vector<std::pair<int, int>> picks);

  // softmax(Q K^T / sqrt(d) + mask) V. Throws ContractError if some query
  // row has no visible key.
  NodeId masked_attention(NodeId q, NodeId k, NodeId v, const AttnMask& mask);

 private:
  struct Node {
    Matrix owned;
    const Matrix* view = nullptr;
    Matrix grad;  // empty until touched by backward
    std::function<void(Tape&, const Matrix&)> back;
  };

  std::vector<Node> nodes_;
  bool ran_backward_ = false;

  const Matrix& v(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.view ? *n.view : n.owned;
  }
  Matrix& grad_buffer(NodeId id);
  NodeId push(Matrix value, std::function<void(Tape&, const Matrix&)> back);
  void check_id(NodeId id, const char* what) const;
};

// Weight nodes of one transformer block, already registered on a tape.
struct BlockNodeIds {
  NodeId wq, bq, wk, bk, wv, bv, wo, bo;
  NodeId ln1_gain, ln1_bias;
  NodeId w1, b1, w2, b2;
  NodeId ln2_gain, ln2_bias;
};

// Post-layer-norm transformer block:
//   h1 = LN1(x + dropout(attn_out W_o + b_o))
//   h2 = LN2(h1 + dropout(gelu(h1 W_1 + b_1) W_2 + b_2))
// Single-head attention at full width; FFN inner width is w1's column count.
NodeId transformer_block(Tape& t, NodeId x, const BlockNodeIds& w, const AttnMask& mask,
                         double dropout_rate, Rng* rng, bool dropout_active);

}  // namespace steamrec
