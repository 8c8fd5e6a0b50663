// Shared test infrastructure: finite-difference gradient checking, an
// independent reference implementation of the model forward/loss math,
// a corruption round-trip applier, and a synthetic Markov dataset.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steamrec/corruption.hpp"
#include "steamrec/data.hpp"
#include "steamrec/model.hpp"
#include "steamrec/training.hpp"

namespace ts {

// ------------------------------------------------------------ fd checking --

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;
};

// Central finite differences against the tape's analytic gradients. The
// builder must construct the same graph on every call (fixed seeds for any
// internal randomness) and return a 1x1 root.
template <typename BuildFn>
FdReport fd_gradient_check(std::vector<steamrec::Matrix*> leaves, BuildFn&& build,
                           double step = 1e-5) {
  using namespace steamrec;
  std::vector<Matrix> grads;
  {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (Matrix* m : leaves) ids.push_back(tape.leaf(*m));
    tape.backward(build(tape, ids));
    for (size_t i = 0; i < leaves.size(); ++i) {
      const Matrix* g = tape.grad(ids[i]);
      grads.push_back(g ? *g : Matrix::zeros(leaves[i]->rows, leaves[i]->cols));
    }
  }
  const auto eval = [&]() {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (Matrix* m : leaves) ids.push_back(tape.leaf(*m));
    return tape.val(build(tape, ids))(0, 0);
  };
  FdReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Matrix& m = *leaves[li];
    for (size_t k = 0; k < m.data.size(); ++k) {
      const double saved = m.data[k];
      m.data[k] = saved + step;
      const double fp = eval();
      m.data[k] = saved - step;
      const double fm = eval();
      m.data[k] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double g = grads[li].data[k];
      const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "leaf " + std::to_string(li) + " element " + std::to_string(k) +
                    ": analytic " + std::to_string(g) + " vs fd " + std::to_string(fd);
      }
    }
  }
  return rep;
}

// Same check over every model parameter; the builder receives registered
// parameter nodes.
template <typename LossFn>
FdReport fd_check_params(steamrec::ModelParameters& params, LossFn&& loss, double step = 1e-5) {
  using namespace steamrec;
  std::vector<Matrix> grads;
  {
    Tape tape;
    ParamNodes nodes = register_params(tape, params);
    tape.backward(loss(tape, nodes));
    auto entries = params.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
      const Matrix* g = tape.grad(nodes.ordered[i]);
      grads.push_back(g ? *g : Matrix::zeros(entries[i].second->rows, entries[i].second->cols));
    }
  }
  const auto eval = [&]() {
    Tape tape;
    ParamNodes nodes = register_params(tape, params);
    return tape.val(loss(tape, nodes))(0, 0);
  };
  FdReport rep;
  auto entries = params.entries();
  for (size_t li = 0; li < entries.size(); ++li) {
    Matrix& m = *entries[li].second;
    for (size_t k = 0; k < m.data.size(); ++k) {
      const double saved = m.data[k];
      m.data[k] = saved + step;
      const double fp = eval();
      m.data[k] = saved - step;
      const double fm = eval();
      m.data[k] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double g = grads[li].data[k];
      const double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = entries[li].first + " element " + std::to_string(k) + ": analytic " +
                    std::to_string(g) + " vs fd " + std::to_string(fd);
      }
    }
  }
  return rep;
}

// ------------------------------------------------------- tiny model setup --

inline steamrec::ModelConfig tiny_config() {
  steamrec::ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.dropout = 0.5;
  cfg.max_raw_len = 8;
  cfg.max_corrected_len = 12;
  cfg.max_insert_decode = 5;
  cfg.position_table_rows = 14;
  return cfg;
}

inline steamrec::Vocabulary tiny_vocab() { return steamrec::Vocabulary{8}; }

inline steamrec::ModelParameters tiny_params(uint64_t seed) {
  steamrec::Rng rng(seed);
  return steamrec::ModelParameters::init(tiny_config(), tiny_vocab(), rng);
}

inline std::vector<int> random_real_sequence(const steamrec::Vocabulary& vocab, int len,
                                             steamrec::Rng& rng) {
  std::vector<int> seq(len);
  for (int& id : seq) id = 1 + rng.below(vocab.item_count);
  return seq;
}

// ------------------------------------------------- reference forward math --

// An independent, loop-by-loop reimplementation of the network used as the
// oracle for loss values. Dropout is never applied (compare in inference
// mode).
namespace refm {

using steamrec::BlockWeights;
using steamrec::Matrix;
using steamrec::ModelConfig;
using steamrec::ModelParameters;
using steamrec::Vocabulary;

inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = Matrix::zeros(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < w.cols; ++j) {
      double s = b(0, j);
      for (int k = 0; k < x.cols; ++k) s += x(i, k) * w(k, j);
      y(i, j) = s;
    }
  return y;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (double& v : y) v /= sum;
  return y;
}

inline double log_softmax_at(const std::vector<double>& x, size_t idx) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  return x[idx] - mx - std::log(sum);
}

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Matrix y = Matrix::zeros(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= x.cols;
    double var = 0.0;
    for (int j = 0; j < x.cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= x.cols;
    const double inv = 1.0 / std::sqrt(var + 1e-12);
    for (int j = 0; j < x.cols; ++j)
      y(i, j) = (x(i, j) - mean) * inv * gain(0, j) + bias(0, j);
  }
  return y;
}

inline Matrix gelu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return y;
}

// kind: 0 = all keys with key_ok, 1 = causal.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, int kind,
                        const std::vector<uint8_t>& key_ok) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  Matrix out = Matrix::zeros(q.rows, v.cols);
  for (int i = 0; i < q.rows; ++i) {
    std::vector<double> scores(k.rows);
    for (int j = 0; j < k.rows; ++j) {
      double dot = 0.0;
      for (int d = 0; d < q.cols; ++d) dot += q(i, d) * k(j, d);
      dot *= scale;
      const bool allowed = kind == 1 ? (j <= i) : (key_ok.empty() || key_ok[j] != 0);
      scores[j] = allowed ? dot : -1e30;
    }
    const std::vector<double> p = softmax(scores);
    for (int j = 0; j < k.rows; ++j)
      for (int d = 0; d < v.cols; ++d) out(i, d) += p[j] * v(j, d);
  }
  return out;
}

inline Matrix block(const Matrix& x, const BlockWeights& w, int kind,
                    const std::vector<uint8_t>& key_ok) {
  const Matrix q = linear(x, w.wq, w.bq);
  const Matrix k = linear(x, w.wk, w.bk);
  const Matrix v = linear(x, w.wv, w.bv);
  const Matrix attn = linear(attention(q, k, v, kind, key_ok), w.wo, w.bo);
  Matrix h1 = x;
  for (size_t i = 0; i < h1.data.size(); ++i) h1.data[i] += attn.data[i];
  h1 = layer_norm(h1, w.ln1_gain, w.ln1_bias);
  const Matrix ffn = linear(gelu(linear(h1, w.w1, w.b1)), w.w2, w.b2);
  Matrix h2 = h1;
  for (size_t i = 0; i < h2.data.size(); ++i) h2.data[i] += ffn.data[i];
  return layer_norm(h2, w.ln2_gain, w.ln2_bias);
}

inline Matrix encode(const std::vector<int>& ids, const ModelParameters& p,
                     const ModelConfig& cfg, const Vocabulary& vocab) {
  const int n = static_cast<int>(ids.size());
  Matrix x = Matrix::zeros(n, cfg.embed_dim);
  std::vector<uint8_t> key_ok(n);
  for (int i = 0; i < n; ++i) {
    key_ok[i] = ids[i] != vocab.pad_id();
    for (int j = 0; j < cfg.embed_dim; ++j)
      x(i, j) = p.item_embeddings(ids[i], j) + p.position_embeddings(i, j);
  }
  for (const BlockWeights& w : p.encoder) x = block(x, w, 0, key_ok);
  return x;
}

inline Matrix item_logits(const Matrix& h, const ModelParameters& p) {
  Matrix logits = Matrix::zeros(h.rows, p.item_embeddings.rows);
  for (int i = 0; i < h.rows; ++i)
    for (int r = 0; r < p.item_embeddings.rows; ++r) {
      double dot = 0.0;
      for (int d = 0; d < h.cols; ++d) dot += h(i, d) * p.item_embeddings(r, d);
      logits(i, r) = dot;
    }
  return logits;
}

inline Matrix recommend_logits(const Matrix& h_e, const std::vector<uint8_t>& key_ok,
                               const ModelParameters& p) {
  Matrix h = h_e;
  for (const BlockWeights& w : p.recommender) h = block(h, w, 0, key_ok);
  return item_logits(h, p);
}

// Teacher-forced generator logits for an anchor hidden state and a prefix of
// already-inserted items. Row n predicts insertion step n.
inline Matrix generator_logits(const std::vector<double>& anchor, const std::vector<int>& prefix,
                               const ModelParameters& p, const ModelConfig& cfg) {
  const int rows = 1 + static_cast<int>(prefix.size());
  Matrix x = Matrix::zeros(rows, cfg.embed_dim);
  for (int j = 0; j < cfg.embed_dim; ++j) x(0, j) = anchor[j] + p.position_embeddings(0, j);
  for (size_t n = 0; n < prefix.size(); ++n)
    for (int j = 0; j < cfg.embed_dim; ++j)
      x(static_cast<int>(n) + 1, j) =
          p.item_embeddings(prefix[n], j) + p.position_embeddings(static_cast<int>(n) + 1, j);
  for (const BlockWeights& w : p.corrector) x = block(x, w, 1, {});
  return item_logits(x, p);
}

inline std::vector<double> matrix_row(const Matrix& m, int r) {
  return std::vector<double>(m.data.begin() + static_cast<size_t>(r) * m.cols,
                             m.data.begin() + static_cast<size_t>(r + 1) * m.cols);
}

// Corrector loss: operation cross entropy over every modified position plus
// teacher-forced generation cross entropy per insertion target (eos step
// included), sharing one encoding of the modified sequence.
inline double corrector_loss(const steamrec::CorruptionSample& sample,
                             const ModelParameters& p, const ModelConfig& cfg,
                             const Vocabulary& vocab) {
  const Matrix h = encode(sample.modified, p, cfg, vocab);
  double loss = 0.0;
  for (size_t t = 0; t < sample.modified.size(); ++t) {
    std::vector<double> logits(3);
    for (int c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (int d = 0; d < cfg.embed_dim; ++d) dot += h(static_cast<int>(t), d) * p.op_projection(c, d);
      logits[c] = dot;
    }
    loss -= log_softmax_at(logits, static_cast<size_t>(sample.ops[t]));
  }
  for (const auto& [pos, target] : sample.insert_targets) {
    const std::vector<int> prefix(target.begin(), target.end() - 1);
    const Matrix g = generator_logits(matrix_row(h, pos), prefix, p, cfg);
    for (size_t n = 0; n < target.size(); ++n)
      loss -= log_softmax_at(matrix_row(g, static_cast<int>(n)),
                             static_cast<size_t>(target[n]));
  }
  return loss;
}

inline double masked_nll(const steamrec::MaskedSample& sample, const ModelParameters& p,
                         const ModelConfig& cfg, const Vocabulary& vocab) {
  const Matrix h = encode(sample.masked, p, cfg, vocab);
  std::vector<uint8_t> key_ok(sample.masked.size());
  for (size_t i = 0; i < sample.masked.size(); ++i) key_ok[i] = sample.masked[i] != vocab.pad_id();
  const Matrix logits = recommend_logits(h, key_ok, p);
  double loss = 0.0;
  for (const auto& [pos, original] : sample.targets)
    loss -= log_softmax_at(matrix_row(logits, pos), static_cast<size_t>(original));
  return loss;
}

inline double recommender_loss(const steamrec::MaskedSample* raw,
                               const steamrec::MaskedSample* corrected,
                               const ModelParameters& p, const ModelConfig& cfg,
                               const Vocabulary& vocab) {
  double loss = 0.0;
  if (raw) loss += masked_nll(*raw, p, cfg, vocab);
  if (corrected) loss += masked_nll(*corrected, p, cfg, vocab);
  return loss;
}

}  // namespace refm

// --------------------------------------------------- corruption round trip --

// Replays the ground-truth operations: drop delete-labeled positions, expand
// insert-labeled anchors by their target (generation order is
// nearest-to-anchor first, so placement reverses it), keep the rest.
inline std::vector<int> apply_ops_round_trip(const steamrec::CorruptionSample& sample,
                                             const steamrec::Vocabulary& vocab) {
  using steamrec::OpLabel;
  std::vector<int> out;
  for (size_t i = 0; i < sample.modified.size(); ++i) {
    switch (sample.ops[i]) {
      case OpLabel::Delete:
        break;
      case OpLabel::Keep:
        out.push_back(sample.modified[i]);
        break;
      case OpLabel::Insert: {
        const auto it = sample.insert_targets.find(static_cast<int>(i));
        if (it == sample.insert_targets.end())
          throw std::runtime_error("insert anchor without target");
        const std::vector<int>& target = it->second;
        if (target.empty() || target.back() != vocab.eos_id())
          throw std::runtime_error("target not eos-terminated");
        for (int j = static_cast<int>(target.size()) - 2; j >= 0; --j) out.push_back(target[j]);
        out.push_back(sample.modified[i]);
        break;
      }
    }
  }
  return out;
}

// ------------------------------------------------- synthetic Markov chain --

struct MarkovData {
  steamrec::Dataset dataset;
  std::vector<std::vector<uint8_t>> test_flags;  // 1 = injected noise, aligned with test input
  std::vector<std::vector<int>> heldout;         // fresh corrupted walks, never trained on
  std::vector<std::vector<uint8_t>> heldout_flags;
};

// First-order Markov chain over a random item cycle: with probability 0.9
// the walk follows the cycle successor, otherwise it jumps uniformly.
// Uniform noise items are injected so that roughly `noise_rate` of the final
// positions are noise.
inline MarkovData make_markov_dataset(uint64_t seed, int items = 200, int users = 2000,
                                      double noise_rate = 0.15, int negatives = 99,
                                      int heldout_count = 200, int max_len = 50) {
  using namespace steamrec;
  Rng rng(seed);
  MarkovData out;
  out.dataset.vocab.item_count = items;

  std::vector<int> cycle(items);
  for (int i = 0; i < items; ++i) cycle[i] = i + 1;
  for (int i = items - 1; i > 0; --i) std::swap(cycle[i], cycle[rng.below(i + 1)]);
  std::vector<int> succ(items + 1, 0);
  for (int i = 0; i < items; ++i) succ[cycle[i]] = cycle[(i + 1) % items];

  const auto walk = [&](int len) {
    std::vector<int> seq(len);
    seq[0] = 1 + rng.below(items);
    for (int t = 1; t < len; ++t)
      seq[t] = rng.bernoulli(0.9) ? succ[seq[t - 1]] : 1 + rng.below(items);
    return seq;
  };
  const double gap_prob = noise_rate / (1.0 - noise_rate);
  const auto inject = [&](const std::vector<int>& clean, std::vector<uint8_t>& flags) {
    std::vector<int> noisy;
    flags.clear();
    for (int id : clean) {
      if (rng.bernoulli(gap_prob)) {
        noisy.push_back(1 + rng.below(items));
        flags.push_back(1);
      }
      noisy.push_back(id);
      flags.push_back(0);
    }
    return noisy;
  };
  const auto truncate_back = [max_len](std::vector<int>& seq, std::vector<uint8_t>* flags) {
    if (static_cast<int>(seq.size()) > max_len) {
      const size_t drop = seq.size() - static_cast<size_t>(max_len);
      seq.erase(seq.begin(), seq.begin() + static_cast<long>(drop));
      if (flags) flags->erase(flags->begin(), flags->begin() + static_cast<long>(drop));
    }
  };

  char key[16];
  for (int i = 0; i < items; ++i) {
    std::snprintf(key, sizeof(key), "i%03d", i + 1);
    out.dataset.item_keys.push_back(key);
  }
  for (int u = 0; u < users; ++u) {
    std::snprintf(key, sizeof(key), "u%04d", u + 1);
    out.dataset.user_keys.push_back(key);

    const int len = 12 + rng.below(17);  // uniform 12..28, mean 20
    const std::vector<int> clean = walk(len);
    const int valid_gt = clean[len - 2];
    const int test_gt = clean[len - 1];

    std::vector<uint8_t> flags;
    std::vector<int> body = inject(std::vector<int>(clean.begin(), clean.end() - 2), flags);
    std::vector<int> train_row = body;
    truncate_back(train_row, nullptr);
    out.dataset.train.push_back(train_row);

    EvalInstance valid;
    valid.input = train_row;
    valid.ground_truth = valid_gt;

    EvalInstance test;
    test.input = body;
    test.input.push_back(valid_gt);
    flags.push_back(0);
    truncate_back(test.input, &flags);
    test.ground_truth = test_gt;
    out.test_flags.push_back(flags);

    std::set<int> seen(body.begin(), body.end());
    seen.insert(valid_gt);
    seen.insert(test_gt);
    const std::vector<int> history(seen.begin(), seen.end());
    Rng vr(Rng::mix(Rng::mix(seed, 0x6e6567u), static_cast<uint64_t>(2 * u)));
    valid.negatives = sample_negatives(history, out.dataset.vocab, negatives, vr);
    Rng tr(Rng::mix(Rng::mix(seed, 0x6e6567u), static_cast<uint64_t>(2 * u + 1)));
    test.negatives = sample_negatives(history, out.dataset.vocab, negatives, tr);

    out.dataset.valid.push_back(std::move(valid));
    out.dataset.test.push_back(std::move(test));
  }
  for (int i = 0; i < heldout_count; ++i) {
    const std::vector<int> clean = walk(12 + rng.below(17));
    std::vector<uint8_t> flags;
    std::vector<int> noisy = inject(clean, flags);
    truncate_back(noisy, &flags);
    out.heldout.push_back(std::move(noisy));
    out.heldout_flags.push_back(std::move(flags));
  }
  return out;
}

// ------------------------------------------------------------- file utils --

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace ts

// ------------------------------------------------------ subprocess runner --

#ifdef STEAMREC_CLI_PATH
#include <sys/wait.h>

namespace ts {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

inline CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(STEAMREC_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  CliResult res;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) res.output.append(buf, n);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

}  // namespace ts
#endif
