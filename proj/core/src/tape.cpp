#include "steamrec/tape.hpp"

#include <cmath>
#include <string>

namespace steamrec {

AttnMask AttnMask::all(int q_rows, int k_rows) {
  AttnMask m;
  m.q_rows = q_rows;
  m.k_rows = k_rows;
  m.allowed.assign(static_cast<size_t>(q_rows) * k_rows, 1);
  return m;
}

AttnMask AttnMask::causal(int n) {
  AttnMask m;
  m.q_rows = n;
  m.k_rows = n;
  m.allowed.assign(static_cast<size_t>(n) * n, 0);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k <= q; ++k) m.allowed[static_cast<size_t>(q) * n + k] = 1;
  }
  return m;
}

AttnMask AttnMask::keys_visible(int q_rows, const std::vector<uint8_t>& key_ok) {
  AttnMask m;
  m.q_rows = q_rows;
  m.k_rows = static_cast<int>(key_ok.size());
  m.allowed.resize(static_cast<size_t>(q_rows) * m.k_rows);
  for (int q = 0; q < q_rows; ++q) {
    for (int k = 0; k < m.k_rows; ++k) {
      m.allowed[static_cast<size_t>(q) * m.k_rows + k] = key_ok[k] ? 1 : 0;
    }
  }
  return m;
}

void Tape::check_id(NodeId id, const char* what) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw ContractError(std::string(what) + ": invalid node id " + std::to_string(id));
  }
}

NodeId Tape::leaf(const Matrix& external) {
  Node n;
  n.view = &external;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::value(Matrix v) {
  Node n;
  n.owned = std::move(v);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::push(Matrix value, std::function<void(Tape&, const Matrix&)> back) {
  Node n;
  n.owned = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

const Matrix& Tape::val(NodeId id) const {
  check_id(id, "val");
  return v(id);
}

const Matrix* Tape::grad(NodeId id) const {
  check_id(id, "grad");
  const Node& n = nodes_[static_cast<size_t>(id)];
  return (n.grad.rows == 0 && n.grad.cols == 0) ? nullptr : &n.grad;
}

Matrix& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.rows == 0 && n.grad.cols == 0) {
    const Matrix& value = v(id);
    n.grad = Matrix::zeros(value.rows, value.cols);
  }
  return n.grad;
}

void Tape::backward(NodeId root) {
  check_id(root, "backward");
  if (ran_backward_) throw ContractError("backward called twice on one tape");
  ran_backward_ = true;
  const Matrix& rv = v(root);
  if (rv.rows != 1 || rv.cols != 1) {
    throw ContractError("backward root must be 1x1, got " + rv.shape_str());
  }
  grad_buffer(root)(0, 0) = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.back) continue;
    if (n.grad.rows == 0 && n.grad.cols == 0) continue;  // not on a path to root
    n.back(*this, n.grad);
  }
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a, "add");
  check_id(b, "add");
  const Matrix& A = v(a);
  const Matrix& B = v(b);
  if (!A.same_shape(B)) {
    throw ShapeError("add: shapes " + A.shape_str() + " and " + B.shape_str() + " differ");
  }
  Matrix out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  return push(std::move(out), [a, b](Tape& t, const Matrix& d) {
    Matrix& ga = t.grad_buffer(a);
    for (size_t i = 0; i < d.data.size(); ++i) ga.data[i] += d.data[i];
    Matrix& gb = t.grad_buffer(b);
    for (size_t i = 0; i < d.data.size(); ++i) gb.data[i] += d.data[i];
  });
}

NodeId Tape::scale(NodeId a, double s) {
  check_id(a, "scale");
  Matrix out = v(a);
  for (double& x : out.data) x *= s;
  return push(std::move(out), [a, s](Tape& t, const Matrix& d) {
    Matrix& ga = t.grad_buffer(a);
    for (size_t i = 0; i < d.data.size(); ++i) ga.data[i] += s * d.data[i];
  });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  Matrix out = steamrec::matmul(v(a), v(b));
  return push(std::move(out), [a, b](Tape& t, const Matrix& d) {
    add_matmul_nt(d, t.v(b), t.grad_buffer(a));  // dA += dC B^T
    add_matmul_tn(t.v(a), d, t.grad_buffer(b));  // dB += A^T dC
  });
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  check_id(a, "matmul_nt");
  check_id(b, "matmul_nt");
  Matrix out = steamrec::matmul_nt(v(a), v(b));
  return push(std::move(out), [a, b](Tape& t, const Matrix& d) {
    add_matmul_nn(d, t.v(b), t.grad_buffer(a));  // dA += dC B
    add_matmul_tn(d, t.v(a), t.grad_buffer(b));  // dB += dC^T A
  });
}

NodeId Tape::add_row(NodeId x, NodeId row) {
  check_id(x, "add_row");
  check_id(row, "add_row");
  const Matrix& X = v(x);
  const Matrix& R = v(row);
  if (R.rows != 1 || R.cols != X.cols) {
    throw ShapeError("add_row: bias shape " + R.shape_str() + " does not broadcast over " +
                     X.shape_str());
  }
  Matrix out = X;
  for (int i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    for (int j = 0; j < out.cols; ++j) o[j] += R.data[static_cast<size_t>(j)];
  }
  return push(std::move(out), [x, row](Tape& t, const Matrix& d) {
    Matrix& gx = t.grad_buffer(x);
    for (size_t i = 0; i < d.data.size(); ++i) gx.data[i] += d.data[i];
    Matrix& gr = t.grad_buffer(row);
    for (int i = 0; i < d.rows; ++i) {
      const double* drow = d.row(i);
      for (int j = 0; j < d.cols; ++j) gr.data[static_cast<size_t>(j)] += drow[j];
    }
  });
}

NodeId Tape::row_softmax(NodeId x) {
  check_id(x, "row_softmax");
  Matrix out = steamrec::row_softmax(v(x));
  NodeId id = push(std::move(out), nullptr);
  nodes_.back().back = [x, id](Tape& t, const Matrix& d) {
    // dx = y * (dy - <dy, y>_row)
    const Matrix& y = t.v(id);
    Matrix& gx = t.grad_buffer(x);
    for (int i = 0; i < y.rows; ++i) {
      const double* yr = y.row(i);
      const double* dr = d.row(i);
      double dot = 0.0;
      for (int j = 0; j < y.cols; ++j) dot += dr[j] * yr[j];
      double* g = gx.row(i);
      for (int j = 0; j < y.cols; ++j) g[j] += yr[j] * (dr[j] - dot);
    }
  };
  return id;
}

NodeId Tape::row_log_softmax(NodeId x) {
  check_id(x, "row_log_softmax");
  const Matrix& X = v(x);
  if (X.cols == 0) throw ShapeError("row_log_softmax on matrix with zero columns");
  Matrix out(X.rows, X.cols);
  for (int i = 0; i < X.rows; ++i) {
    const double* in = X.row(i);
    double* o = out.row(i);
    double mx = in[0];
    for (int j = 1; j < X.cols; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int j = 0; j < X.cols; ++j) sum += std::exp(in[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < X.cols; ++j) o[j] = in[j] - lse;
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_.back().back = [x, id](Tape& t, const Matrix& d) {
    // dx = dy - softmax(x) * rowsum(dy); softmax recovered as exp(y)
    const Matrix& y = t.v(id);
    Matrix& gx = t.grad_buffer(x);
    for (int i = 0; i < y.rows; ++i) {
      const double* yr = y.row(i);
      const double* dr = d.row(i);
      double rs = 0.0;
      for (int j = 0; j < y.cols; ++j) rs += dr[j];
      double* g = gx.row(i);
      for (int j = 0; j < y.cols; ++j) g[j] += dr[j] - std::exp(yr[j]) * rs;
    }
  };
  return id;
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  check_id(x, "layer_norm");
  check_id(gain, "layer_norm");
  check_id(bias, "layer_norm");
  constexpr double kEps = 1e-12;
  const Matrix& X = v(x);
  const Matrix& G = v(gain);
  const Matrix& B = v(bias);
  if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols) {
    throw ShapeError("layer_norm: gain " + G.shape_str() + " / bias " + B.shape_str() +
                     " do not match input " + X.shape_str());
  }
  const int n = X.rows, c = X.cols;
  auto mean = std::make_shared<std::vector<double>>(n);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Matrix out(n, c);
  for (int i = 0; i < n; ++i) {
    const double* in = X.row(i);
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += in[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double dlt = in[j] - mu;
      var += dlt * dlt;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + kEps);
    (*mean)[i] = mu;
    (*inv_std)[i] = inv;
    double* o = out.row(i);
    for (int j = 0; j < c; ++j) o[j] = G.data[static_cast<size_t>(j)] * (in[j] - mu) * inv +
                                       B.data[static_cast<size_t>(j)];
  }
  return push(std::move(out), [x, gain, bias, mean, inv_std](Tape& t, const Matrix& d) {
    const Matrix& X2 = t.v(x);
    const Matrix& G2 = t.v(gain);
    const int n2 = X2.rows, c2 = X2.cols;
    Matrix& gx = t.grad_buffer(x);
    Matrix& gg = t.grad_buffer(gain);
    Matrix& gb = t.grad_buffer(bias);
    for (int i = 0; i < n2; ++i) {
      const double mu = (*mean)[i];
      const double inv = (*inv_std)[i];
      const double* in = X2.row(i);
      const double* dr = d.row(i);
      double* g = gx.row(i);
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int j = 0; j < c2; ++j) {
        const double xh = (in[j] - mu) * inv;
        const double dxh = dr[j] * G2.data[static_cast<size_t>(j)];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
        gg.data[static_cast<size_t>(j)] += dr[j] * xh;
        gb.data[static_cast<size_t>(j)] += dr[j];
      }
      const double m1 = sum_dxh / c2;
      const double m2 = sum_dxh_xh / c2;
      for (int j = 0; j < c2; ++j) {
        const double xh = (in[j] - mu) * inv;
        const double dxh = dr[j] * G2.data[static_cast<size_t>(j)];
        g[j] += inv * (dxh - m1 - xh * m2);
      }
    }
  });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

NodeId Tape::gelu(NodeId x) {
  check_id(x, "gelu");
  Matrix out = v(x);
  for (double& t : out.data) t = 0.5 * t * (1.0 + std::erf(t * kInvSqrt2));
  return push(std::move(out), [x](Tape& t, const Matrix& d) {
    const Matrix& X = t.v(x);
    Matrix& gx = t.grad_buffer(x);
    for (size_t i = 0; i < d.data.size(); ++i) {
      const double u = X.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(u * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * u * u);
      gx.data[i] += d.data[i] * (cdf + u * pdf);
    }
  });
}

NodeId Tape::dropout(NodeId x, double rate, Rng& rng, bool active) {
  check_id(x, "dropout");
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0) return x;
  const Matrix& X = v(x);
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(X.data.size());
  Matrix out = X;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double m = rng.uniform() < keep ? inv_keep : 0.0;
    (*mask)[i] = m;
    out.data[i] *= m;
  }
  return push(std::move(out), [x, mask](Tape& t, const Matrix& d) {
    Matrix& gx = t.grad_buffer(x);
    for (size_t i = 0; i < d.data.size(); ++i) gx.data[i] += d.data[i] * (*mask)[i];
  });
}

NodeId Tape::embedding_rows(NodeId table, std::vector<int> ids) {
  check_id(table, "embedding_rows");
  const Matrix& T = v(table);
  for (int id : ids) {
    if (id < 0 || id >= T.rows) {
      throw ContractError("embedding_rows: id " + std::to_string(id) +
                          " outside table with " + std::to_string(T.rows) + " rows");
    }
  }
  Matrix out(static_cast<int>(ids.size()), T.cols);
  for (size_t t = 0; t < ids.size(); ++t) {
    const double* src = T.row(ids[t]);
    double* dst = out.row(static_cast<int>(t));
    for (int j = 0; j < T.cols; ++j) dst[j] = src[j];
  }
  auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
  return push(std::move(out), [table, ids_ptr](Tape& t, const Matrix& d) {
    Matrix& gt = t.grad_buffer(table);
    for (size_t r = 0; r < ids_ptr->size(); ++r) {
      double* dst = gt.row((*ids_ptr)[r]);
      const double* src = d.row(static_cast<int>(r));
      for (int j = 0; j < d.cols; ++j) dst[j] += src[j];
    }
  });
}

NodeId Tape::slice_rows(NodeId x, int start, int count) {
  check_id(x, "slice_rows");
  const Matrix& X = v(x);
  if (start < 0 || count < 0 || start + count > X.rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + X.shape_str());
  }
  Matrix out(count, X.cols);
  for (int r = 0; r < count; ++r) {
    const double* src = X.row(start + r);
    double* dst = out.row(r);
    for (int j = 0; j < X.cols; ++j) dst[j] = src[j];
  }
  return push(std::move(out), [x, start](Tape& t, const Matrix& d) {
    Matrix& gx = t.grad_buffer(x);
    for (int r = 0; r < d.rows; ++r) {
      double* dst = gx.row(start + r);
      const double* src = d.row(r);
      for (int j = 0; j < d.cols; ++j) dst[j] += src[j];
    }
  });
}

NodeId Tape::concat_rows(NodeId top, NodeId bottom) {
  check_id(top, "concat_rows");
  check_id(bottom, "concat_rows");
  const Matrix& A = v(top);
  const Matrix& B = v(bottom);
  if (A.cols != B.cols) {
    throw ShapeError("concat_rows: column counts differ, " + A.shape_str() + " vs " +
                     B.shape_str());
  }
  Matrix out(A.rows + B.rows, A.cols);
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<long>(A.data.size()));
  return push(std::move(out), [top, bottom](Tape& t, const Matrix& d) {
    Matrix& ga = t.grad_buffer(top);
    Matrix& gb = t.grad_buffer(bottom);
    const size_t top_n = ga.data.size();
    for (size_t i = 0; i < top_n; ++i) ga.data[i] += d.data[i];
    for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += d.data[top_n + i];
  });
}

NodeId Tape::mask_fill(NodeId x, AttnMask mask, double fill) {
  check_id(x, "mask_fill");
  const Matrix& X = v(x);
  if (mask.q_rows != X.rows || mask.k_rows != X.cols) {
    throw ShapeError("mask_fill: mask " + std::to_string(mask.q_rows) + "x" +
                     std::to_string(mask.k_rows) + " does not match " + X.shape_str());
  }
  Matrix out = X;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (!mask.allowed[i]) out.data[i] = fill;
  }
  auto mask_ptr = std::make_shared<AttnMask>(std::move(mask));
  return push(std::move(out), [x, mask_ptr](Tape& t, const Matrix& d) {
    Matrix& gx = t.grad_buffer(x);
    for (size_t i = 0; i < d.data.size(); ++i) {
      if (mask_ptr->allowed[i]) gx.data[i] += d.data[i];
    }
  });
}

NodeId Tape::pick_sum(NodeId x, std::vector<std::pair<int, int>> picks) {
  check_id(x, "pick_sum");
  const Matrix& X = v(x);
  double sum = 0.0;
  for (const auto& [r, c] : picks) {
    if (r < 0 || r >= X.rows || c < 0 || c >= X.cols) {
      throw ContractError("pick_sum: entry (" + std::to_string(r) + ", " + std::to_string(c) +
                          ") outside " + X.shape_str());
    }
    sum += X(r, c);
  }
  Matrix out(1, 1);
  out(0, 0) = sum;
  auto picks_ptr = std::make_shared<std::vector<std::pair<int, int>>>(std::move(picks));
  return push(std::move(out), [x, picks_ptr](Tape& t, const Matrix& d) {
    Matrix& gx = t.grad_buffer(x);
    for (const auto& [r, c] : *picks_ptr) gx(r, c) += d(0, 0);
  });
}

NodeId Tape::masked_attention(NodeId q, NodeId k, NodeId vv, const AttnMask& mask) {
  check_id(q, "masked_attention");
  check_id(k, "masked_attention");
  check_id(vv, "masked_attention");
  const Matrix& Q = v(q);
  const Matrix& K = v(k);
  const Matrix& V = v(vv);
  if (Q.cols != K.cols) {
    throw ShapeError("masked_attention: query width " + Q.shape_str() + " vs key width " +
                     K.shape_str());
  }
  if (K.rows != V.rows) {
    throw ShapeError("masked_attention: key rows " + K.shape_str() + " vs value rows " +
                     V.shape_str());
  }
  if (mask.q_rows != Q.rows || mask.k_rows != K.rows) {
    throw ShapeError("masked_attention: mask " + std::to_string(mask.q_rows) + "x" +
                     std::to_string(mask.k_rows) + " does not match scores " +
                     std::to_string(Q.rows) + "x" + std::to_string(K.rows));
  }
  for (int qi = 0; qi < mask.q_rows; ++qi) {
    bool any = false;
    for (int ki = 0; ki < mask.k_rows; ++ki) any = any || mask.at(qi, ki);
    if (!any) {
      throw ContractError("masked_attention: query row " + std::to_string(qi) +
                          " has no visible key");
    }
  }
  NodeId scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(Q.cols)));
  NodeId masked = mask_fill(scores, mask, kMaskFill);
  NodeId attn = row_softmax(masked);
  return matmul(attn, vv);
}

NodeId transformer_block(Tape& t, NodeId x, const BlockNodeIds& w, const AttnMask& mask,
                         double dropout_rate, Rng* rng, bool dropout_active) {
  if (dropout_active && rng == nullptr) {
    throw ContractError("transformer_block: active dropout requires an rng");
  }
  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  NodeId q = t.add_row(t.matmul(x, w.wq), w.bq);
  NodeId k = t.add_row(t.matmul(x, w.wk), w.bk);
  NodeId v = t.add_row(t.matmul(x, w.wv), w.bv);
  NodeId attn = t.masked_attention(q, k, v, mask);
  NodeId proj = t.add_row(t.matmul(attn, w.wo), w.bo);
  proj = t.dropout(proj, dropout_rate, r, dropout_active);
  NodeId h1 = t.layer_norm(t.add(x, proj), w.ln1_gain, w.ln1_bias);
  NodeId f = t.add_row(t.matmul(h1, w.w1), w.b1);
  f = t.gelu(f);
  f = t.add_row(t.matmul(f, w.w2), w.b2);
  f = t.dropout(f, dropout_rate, r, dropout_active);
  return t.layer_norm(t.add(h1, f), w.ln2_gain, w.ln2_bias);
}

}  // namespace steamrec
