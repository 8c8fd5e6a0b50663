#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include "steamrec/model.hpp"

namespace steamrec {

struct RankResult {
  int instance = 0;
  int rank = 0;  // 1-based among ground truth + negatives
};

// Pessimistic rank of scores[0] (the ground truth) among all candidates:
// 1 + #(strictly greater) + #(tied negatives).
int pessimistic_rank(const std::vector<double>& scores);

// Scores are ordered [ground truth, negatives...]; a count mismatch with the
// instance's candidate set is an error.
RankResult rank_instance(const EvalInstance& inst, const std::vector<double>& scores,
                         int instance_index = 0);

struct MetricPair {
  double hr = 0.0;   // 100 * mean(rank <= k)
  double mrr = 0.0;  // 100 * mean(rank <= k ? 1/rank : 0)
};

MetricPair hr_mrr(const std::vector<RankResult>& results, int k);

enum class EvalMode { raw, corrected };

const char* eval_mode_name(EvalMode m);

struct GroupMetrics {
  int count = 0;
  double hr5 = 0.0, hr10 = 0.0, mrr5 = 0.0, mrr10 = 0.0;
};

struct OperationStats {
  double pct_changed = 0.0;
  double pct_keep = 0.0;
  double pct_delete = 0.0;
  double pct_insert = 0.0;  // one per insert-labeled anchor
  long positions = 0;
};

// Groups follow the paper's table layout: -R scores the raw input, -C the
// corrected input; `unchanged` sequences score identically either way.
// Groups that do not apply (raw mode) or are empty are absent.
struct EvalReport {
  EvalMode mode = EvalMode::corrected;
  int instances = 0;
  GroupMetrics overall_r;
  std::optional<GroupMetrics> overall_c;
  std::optional<GroupMetrics> changed_r;
  std::optional<GroupMetrics> changed_c;
  std::optional<GroupMetrics> unchanged;
  std::optional<OperationStats> ops;
};

struct EvaluateOptions {
  EvalMode mode = EvalMode::corrected;
  OpSet op_set = OpSet::full;
  std::optional<OpLabel> force_label;  // test hook, forwarded to correction
  int threads = 0;                     // 0 -> thread_budget()
};

// Scores every instance with next_item_scores; in corrected mode each input
// is corrected first and both raw and corrected rankings are aggregated. Raw
// mode never invokes correction.
EvalReport evaluate(const ModelParameters& params, const ModelConfig& cfg,
                    const Vocabulary& vocab, const std::vector<EvalInstance>& instances,
                    const EvaluateOptions& opts = {});

// 100 * (v_sim - v_real) / v_real; absent when v_real is not positive.
std::optional<double> disturbance(double v_real, double v_sim);

// Two decimals with explicit sign for nonzero values: "-0.28%", "+10.00%",
// "0.00%".
std::string format_disturbance(double pct);

void write_report_text(std::ostream& out, const EvalReport& report);
void write_report_kv(std::ostream& out, const EvalReport& report);

}  // namespace steamrec
