#include "steamrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "steamrec/threading.hpp"

namespace steamrec {

const char* eval_mode_name(EvalMode m) {
  return m == EvalMode::raw ? "raw" : "corrected";
}

int pessimistic_rank(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("pessimistic_rank: no scores");
  const double gt = scores[0];
  int rank = 1;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] >= gt) ++rank;
  }
  return rank;
}

RankResult rank_instance(const EvalInstance& inst, const std::vector<double>& scores,
                         int instance_index) {
  if (scores.size() != inst.negatives.size() + 1) {
    throw ContractError("rank_instance: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(inst.negatives.size() + 1) + " candidates");
  }
  return RankResult{instance_index, pessimistic_rank(scores)};
}

MetricPair hr_mrr(const std::vector<RankResult>& results, int k) {
  if (results.empty()) throw ContractError("hr_mrr: empty result set");
  if (k < 1) throw ContractError("hr_mrr: k must be >= 1");
  double hits = 0.0, rr = 0.0;
  for (const RankResult& r : results) {
    if (r.rank <= k) {
      hits += 1.0;
      rr += 1.0 / static_cast<double>(r.rank);
    }
  }
  const double n = static_cast<double>(results.size());
  return MetricPair{100.0 * hits / n, 100.0 * rr / n};
}

namespace {

GroupMetrics group_metrics(const std::vector<RankResult>& results) {
  GroupMetrics g;
  g.count = static_cast<int>(results.size());
  const MetricPair at5 = hr_mrr(results, 5);
  const MetricPair at10 = hr_mrr(results, 10);
  g.hr5 = at5.hr;
  g.mrr5 = at5.mrr;
  g.hr10 = at10.hr;
  g.mrr10 = at10.mrr;
  return g;
}

struct InstanceOutcome {
  int rank_raw = 0;
  int rank_corrected = 0;
  bool changed = false;
  long keep = 0, del = 0, ins = 0;
};

}  // namespace

EvalReport evaluate(const ModelParameters& params, const ModelConfig& cfg,
                    const Vocabulary& vocab, const std::vector<EvalInstance>& instances,
                    const EvaluateOptions& opts) {
  if (instances.empty()) throw ContractError("evaluate: no instances");
  const int threads = opts.threads > 0 ? opts.threads : thread_budget();

  std::vector<InstanceOutcome> outcomes(instances.size());
  parallel_for(0, static_cast<int>(instances.size()), threads, [&](int i) {
    const EvalInstance& inst = instances[static_cast<size_t>(i)];
    InstanceOutcome& o = outcomes[static_cast<size_t>(i)];
    std::vector<int> candidates;
    candidates.reserve(inst.negatives.size() + 1);
    candidates.push_back(inst.ground_truth);
    candidates.insert(candidates.end(), inst.negatives.begin(), inst.negatives.end());

    const std::vector<double> raw_scores =
        next_item_scores(inst.input, candidates, params, cfg, vocab);
    o.rank_raw = rank_instance(inst, raw_scores, i).rank;

    if (opts.mode == EvalMode::corrected) {
      CorrectionOptions copts;
      copts.op_set = opts.op_set;
      copts.force_label = opts.force_label;
      const CorrectionResult corr = correct_sequence(inst.input, params, cfg, vocab, copts);
      o.changed = corr.corrected != inst.input;
      for (size_t t = 0; t < corr.labels.size(); ++t) {
        switch (corr.labels[t]) {
          case OpLabel::Keep: ++o.keep; break;
          case OpLabel::Delete: ++o.del; break;
          case OpLabel::Insert: ++o.ins; break;
        }
      }
      if (o.changed) {
        if (corr.corrected.empty()) {
          // A fully deleted input cannot be scored; fall back to the raw
          // ranking so the instance still counts.
          o.rank_corrected = o.rank_raw;
        } else {
          const std::vector<double> corr_scores =
              next_item_scores(corr.corrected, candidates, params, cfg, vocab);
          o.rank_corrected = rank_instance(inst, corr_scores, i).rank;
        }
      } else {
        o.rank_corrected = o.rank_raw;
      }
    }
  });

  EvalReport report;
  report.mode = opts.mode;
  report.instances = static_cast<int>(instances.size());

  std::vector<RankResult> all_raw, all_corr, changed_raw, changed_corr, unchanged;
  long keep = 0, del = 0, ins = 0, changed_count = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    const InstanceOutcome& o = outcomes[i];
    const int idx = static_cast<int>(i);
    all_raw.push_back(RankResult{idx, o.rank_raw});
    if (opts.mode == EvalMode::corrected) {
      all_corr.push_back(RankResult{idx, o.rank_corrected});
      if (o.changed) {
        ++changed_count;
        changed_raw.push_back(RankResult{idx, o.rank_raw});
        changed_corr.push_back(RankResult{idx, o.rank_corrected});
      } else {
        unchanged.push_back(RankResult{idx, o.rank_raw});
      }
      keep += o.keep;
      del += o.del;
      ins += o.ins;
    }
  }

  report.overall_r = group_metrics(all_raw);
  if (opts.mode == EvalMode::corrected) {
    report.overall_c = group_metrics(all_corr);
    if (!changed_raw.empty()) {
      report.changed_r = group_metrics(changed_raw);
      report.changed_c = group_metrics(changed_corr);
    }
    if (!unchanged.empty()) report.unchanged = group_metrics(unchanged);
    OperationStats ops;
    ops.positions = keep + del + ins;
    if (ops.positions > 0) {
      ops.pct_keep = 100.0 * static_cast<double>(keep) / static_cast<double>(ops.positions);
      ops.pct_delete = 100.0 * static_cast<double>(del) / static_cast<double>(ops.positions);
      ops.pct_insert = 100.0 * static_cast<double>(ins) / static_cast<double>(ops.positions);
    }
    ops.pct_changed =
        100.0 * static_cast<double>(changed_count) / static_cast<double>(instances.size());
    report.ops = ops;
  }
  return report;
}

std::optional<double> disturbance(double v_real, double v_sim) {
  if (!(v_real > 0.0)) return std::nullopt;
  return 100.0 * (v_sim - v_real) / v_real;
}

std::string format_disturbance(double pct) {
  const double rounded = std::round(pct * 100.0) / 100.0;
  char buf[48];
  if (rounded == 0.0) {
    std::snprintf(buf, sizeof(buf), "0.00%%");
  } else {
    std::snprintf(buf, sizeof(buf), "%+.2f%%", pct);
  }
  return std::string(buf);
}

namespace {

void print_group_row(std::ostream& out, const char* name, const GroupMetrics& g) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-11s %7d %8.2f %8.2f %8.2f %8.2f\n", name, g.count, g.hr5,
                g.hr10, g.mrr5, g.mrr10);
  out << buf;
}

void kv_group(std::ostream& out, const char* name, const GroupMetrics& g) {
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "count.%s = %d\nhr.%s.5 = %.6f\nhr.%s.10 = %.6f\nmrr.%s.5 = %.6f\n"
                "mrr.%s.10 = %.6f\n",
                name, g.count, name, g.hr5, name, g.hr10, name, g.mrr5, name, g.mrr10);
  out << buf;
}

}  // namespace

void write_report_text(std::ostream& out, const EvalReport& report) {
  out << "mode " << eval_mode_name(report.mode) << ", " << report.instances << " instances\n";
  out << "group         count     HR@5    HR@10    MRR@5   MRR@10\n";
  print_group_row(out, "overall_r", report.overall_r);
  if (report.overall_c) print_group_row(out, "overall_c", *report.overall_c);
  if (report.changed_r) print_group_row(out, "changed_r", *report.changed_r);
  if (report.changed_c) print_group_row(out, "changed_c", *report.changed_c);
  if (report.unchanged) print_group_row(out, "unchanged", *report.unchanged);
  if (report.ops) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "operations  changed %.2f%%  keep %.2f%%  delete %.2f%%  insert %.2f%%\n",
                  report.ops->pct_changed, report.ops->pct_keep, report.ops->pct_delete,
                  report.ops->pct_insert);
    out << buf;
  }
}

void write_report_kv(std::ostream& out, const EvalReport& report) {
  out << "mode = " << eval_mode_name(report.mode) << "\n";
  out << "instances = " << report.instances << "\n";
  kv_group(out, "overall_r", report.overall_r);
  if (report.overall_c) kv_group(out, "overall_c", *report.overall_c);
  if (report.changed_r) kv_group(out, "changed_r", *report.changed_r);
  if (report.changed_c) kv_group(out, "changed_c", *report.changed_c);
  if (report.unchanged) kv_group(out, "unchanged", *report.unchanged);
  if (report.ops) {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "pct.changed = %.6f\npct.keep = %.6f\npct.delete = %.6f\npct.insert = %.6f\n",
                  report.ops->pct_changed, report.ops->pct_keep, report.ops->pct_delete,
                  report.ops->pct_insert);
    out << buf;
  }
}

}  // namespace steamrec
