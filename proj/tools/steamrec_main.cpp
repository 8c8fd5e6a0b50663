// Command-line driver: prepare / train / correct / evaluate / simulate.
// Exit codes: 0 success, 1 internal failure, 2 usage or input error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "steamrec/checkpoint.hpp"
#include "steamrec/corruption.hpp"
#include "steamrec/data.hpp"
#include "steamrec/evaluation.hpp"
#include "steamrec/model.hpp"
#include "steamrec/runconfig.hpp"
#include "steamrec/training.hpp"

namespace fs = std::filesystem;
using namespace steamrec;

namespace {

// Stream salts keep independent random decisions on independent seeds.
constexpr uint64_t kSaltInit = 0x696e6974;        // "init"
constexpr uint64_t kSaltValid = 0x76616c6964;     // "valid"
constexpr uint64_t kSaltTest = 0x74657374;        // "test"
constexpr uint64_t kSaltSimulate = 0x73696d;      // "sim"

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string data_dir;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_data) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "global random seed");
  if (with_data) cmd->add_option("--data", args.data_dir, "prepared dataset directory");
  cmd->add_option("--out", args.out, "output location");
}

RunConfig merge_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg.apply_file(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.data_dir.empty()) cfg.data_dir = args.data_dir;
  if (!args.out.empty()) cfg.out_dir = args.out;
  return cfg;
}

std::optional<OpLabel> parse_force_op(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name == "keep") return OpLabel::Keep;
  if (name == "delete") return OpLabel::Delete;
  if (name == "insert") return OpLabel::Insert;
  throw ConfigError("unknown --force-op '" + name + "' (expected keep, delete, insert)");
}

std::ofstream open_out_file(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

// ---------------------------------------------------------------- prepare --

int cmd_prepare(const CommonArgs& common, const std::string& input, int min_count,
                std::optional<int> negatives) {
  RunConfig cfg = merge_config(common);
  if (negatives) cfg.eval_negatives = *negatives;
  cfg.finalize();
  if (cfg.out_dir.empty()) throw ConfigError("prepare needs --out (dataset directory)");

  const auto records = five_core_filter(load_interactions(input), min_count);
  if (records.empty()) throw ConfigError("no interactions survive the " +
                                         std::to_string(min_count) + "-core filter");
  const SequenceData seq = build_sequences(records, cfg.model.max_raw_len);
  const SplitResult split = leave_one_out_split(seq.sequences);
  if (split.train.empty()) throw ConfigError("every sequence is shorter than 3; nothing to split");

  Dataset ds;
  ds.vocab = seq.vocab;
  ds.item_keys = seq.item_keys;
  ds.train = split.train;
  ds.valid = split.valid;
  ds.test = split.test;
  ds.user_keys.reserve(split.user_index.size());
  for (int idx : split.user_index) ds.user_keys.push_back(seq.user_keys[idx]);

  for (size_t i = 0; i < ds.valid.size(); ++i) {
    const auto& history = seq.history[split.user_index[i]];
    Rng vr(Rng::mix(Rng::mix(cfg.seed, kSaltValid), static_cast<uint64_t>(i)));
    ds.valid[i].negatives = sample_negatives(history, ds.vocab, cfg.eval_negatives, vr);
    Rng tr(Rng::mix(Rng::mix(cfg.seed, kSaltTest), static_cast<uint64_t>(i)));
    ds.test[i].negatives = sample_negatives(history, ds.vocab, cfg.eval_negatives, tr);
  }

  write_dataset(ds, cfg.out_dir);
  std::cout << format_stats(compute_stats(seq));
  return 0;
}

// ------------------------------------------------------------------ train --

int cmd_train(const CommonArgs& common, const std::string& variant, const std::string& op_set,
              std::optional<int> epochs) {
  RunConfig cfg = merge_config(common);
  if (!variant.empty()) cfg.train.variant = parse_variant(variant);
  if (!op_set.empty()) cfg.train.op_set = parse_op_set(op_set);
  if (epochs) cfg.train.epochs = *epochs;
  cfg.finalize();
  if (cfg.data_dir.empty()) throw ConfigError("train needs --data (prepared dataset directory)");
  if (cfg.out_dir.empty()) throw ConfigError("train needs --out (run output directory)");

  const Dataset ds = read_dataset(cfg.data_dir);
  fs::create_directories(cfg.out_dir);

  Rng init_rng(Rng::mix(cfg.seed, kSaltInit));
  ModelParameters params = ModelParameters::init(cfg.model, ds.vocab, init_rng);

  std::ofstream log = open_out_file(fs::path(cfg.out_dir) / "train.log");
  log << "# epoch\tl1\tl2\tl\tval_hr10\tseconds\n";
  const auto on_epoch = [&log](const EpochMetrics& m, const ModelParameters&, bool) {
    char line[160];
    std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.3f\n", m.epoch, m.l1, m.l2,
                  m.l, m.val_hr10, m.seconds);
    log << line << std::flush;
  };

  const TrainResult result =
      train(ds, params, cfg.model, cfg.corruption, cfg.train, on_epoch);

  // invocation paths stay out of the checkpoint so reruns into different
  // directories produce byte-identical files
  RunConfig stored = cfg;
  stored.data_dir.clear();
  stored.out_dir.clear();
  save_checkpoint({stored, ds.vocab, std::move(params)}, fs::path(cfg.out_dir) / "final.ckpt");
  save_checkpoint({stored, ds.vocab, result.best_params}, fs::path(cfg.out_dir) / "best.ckpt");

  char summary[96];
  std::snprintf(summary, sizeof(summary), "best epoch %d, validation HR@10 %.2f\n",
                result.best_epoch, result.best_val_hr10);
  std::cout << summary;
  return 0;
}

// ---------------------------------------------------------------- correct --

std::vector<std::vector<int>> read_sequence_lines(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<int>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<int> row;
    size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      if (pos >= line.size()) break;
      size_t end = line.find(' ', pos);
      if (end == std::string::npos) end = line.size();
      const std::string tok = line.substr(pos, end - pos);
      int id = 0;
      try {
        id = std::stoi(tok);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad item id '" +
                         tok + "'");
      }
      if (!vocab.is_real(id)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": item id " + tok +
                         " out of vocabulary (1.." + std::to_string(vocab.item_count) + ")");
      }
      row.push_back(id);
      pos = end;
    }
    if (row.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty sequence row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_correct(const CommonArgs& common, const std::string& checkpoint_path,
                const std::string& input, const std::string& op_set,
                const std::string& force_op) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  CorrectionOptions opts;
  if (!op_set.empty()) opts.op_set = parse_op_set(op_set);
  opts.force_label = parse_force_op(force_op);

  const auto rows = read_sequence_lines(input, ckpt.vocab);

  std::ostringstream body;
  long changed = 0, keep = 0, del = 0, ins = 0;
  for (const auto& row : rows) {
    const CorrectionResult res =
        correct_sequence(row, ckpt.params, ckpt.config.model, ckpt.vocab, opts);
    for (size_t i = 0; i < res.corrected.size(); ++i) {
      if (i) body << ' ';
      body << res.corrected[i];
    }
    body << '\n';
    if (res.corrected != row) ++changed;
    for (OpLabel label : res.labels) {
      if (label == OpLabel::Keep) ++keep;
      else if (label == OpLabel::Delete) ++del;
      else ++ins;
    }
  }

  const long positions = keep + del + ins;
  const double denom_pos = positions > 0 ? static_cast<double>(positions) : 1.0;
  const double denom_rows = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  char summary[160];
  std::snprintf(summary, sizeof(summary),
                "# pct_changed pct_keep pct_delete pct_insert\n# %.2f %.2f %.2f %.2f\n",
                100.0 * static_cast<double>(changed) / denom_rows,
                100.0 * static_cast<double>(keep) / denom_pos,
                100.0 * static_cast<double>(del) / denom_pos,
                100.0 * static_cast<double>(ins) / denom_pos);

  if (!common.out.empty()) {
    std::ofstream out = open_out_file(common.out);
    out << body.str() << summary;
    std::cout << summary;
  } else {
    std::cout << body.str() << summary;
  }
  return 0;
}

// --------------------------------------------------------------- evaluate --

struct NamedReport {
  std::string test_set;  // "real" or "simulated"
  EvalReport report;
};

void write_reports(const fs::path& dir, const NamedReport& named) {
  {
    std::ofstream out = open_out_file(dir / ("eval_" + named.test_set + ".txt"));
    write_report_text(out, named.report);
  }
  {
    std::ofstream out = open_out_file(dir / ("eval_" + named.test_set + ".kv"));
    write_report_kv(out, named.report);
  }
}

void append_disturbance_rows(std::ostream& out, const std::string& group,
                             const GroupMetrics& real, const GroupMetrics& sim) {
  const std::pair<std::string, std::pair<double, double>> rows[] = {
      {"hr." + group + ".5", {real.hr5, sim.hr5}},
      {"hr." + group + ".10", {real.hr10, sim.hr10}},
      {"mrr." + group + ".5", {real.mrr5, sim.mrr5}},
      {"mrr." + group + ".10", {real.mrr10, sim.mrr10}},
  };
  for (const auto& [name, vals] : rows) {
    const auto dist = disturbance(vals.first, vals.second);
    char line[128];
    std::snprintf(line, sizeof(line), "%-18s %8.2f %8.2f %9s\n", name.c_str(), vals.first,
                  vals.second, dist ? format_disturbance(*dist).c_str() : "n/a");
    out << line;
  }
}

int cmd_evaluate(const CommonArgs& common, const std::string& checkpoint_path,
                 const std::string& mode, const std::string& test_set, const std::string& op_set,
                 const std::string& force_op) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  CommonArgs merged = common;
  if (merged.data_dir.empty()) throw ConfigError("evaluate needs --data (prepared dataset directory)");
  const std::string out_dir = !common.out.empty() ? common.out : ".";

  const Dataset ds = read_dataset(merged.data_dir);
  if (ds.vocab.item_count != ckpt.vocab.item_count) {
    throw ConfigError("checkpoint was trained on " + std::to_string(ckpt.vocab.item_count) +
                      " items but dataset " + merged.data_dir + " has " +
                      std::to_string(ds.vocab.item_count));
  }

  EvaluateOptions opts;
  if (mode == "raw") opts.mode = EvalMode::raw;
  else if (mode == "corrected") opts.mode = EvalMode::corrected;
  else throw ConfigError("unknown --mode '" + mode + "' (expected raw, corrected)");
  if (!op_set.empty()) opts.op_set = parse_op_set(op_set);
  opts.force_label = parse_force_op(force_op);

  const bool want_real = test_set == "real" || test_set == "both";
  const bool want_sim = test_set == "simulated" || test_set == "both";
  if (!want_real && !want_sim) {
    throw ConfigError("unknown --test-set '" + test_set + "' (expected real, simulated, both)");
  }
  if (want_sim && !ds.has_simulated()) {
    throw ConfigError("dataset " + merged.data_dir +
                      " has no simulated test set; run `steamrec simulate --data " +
                      merged.data_dir + "` first");
  }

  fs::create_directories(out_dir);
  std::vector<NamedReport> reports;
  if (want_real) {
    reports.push_back({"real", evaluate(ckpt.params, ckpt.config.model, ckpt.vocab, ds.test, opts)});
  }
  if (want_sim) {
    std::vector<EvalInstance> sim = ds.test;
    for (size_t i = 0; i < sim.size(); ++i) sim[i].input = ds.simulated_inputs[i];
    reports.push_back({"simulated", evaluate(ckpt.params, ckpt.config.model, ckpt.vocab, sim, opts)});
  }

  for (const auto& named : reports) {
    write_reports(out_dir, named);
    std::cout << "test set " << named.test_set << "\n";
    write_report_text(std::cout, named.report);
    std::cout << "\n";
  }

  if (want_real && want_sim) {
    std::ofstream out = open_out_file(fs::path(out_dir) / "disturbance.txt");
    char header[96];
    std::snprintf(header, sizeof(header), "%-18s %8s %8s %9s\n", "metric", "real", "sim",
                  "dist%");
    out << header;
    const EvalReport& real = reports[0].report;
    const EvalReport& sim = reports[1].report;
    append_disturbance_rows(out, "overall_r", real.overall_r, sim.overall_r);
    if (real.overall_c && sim.overall_c) {
      append_disturbance_rows(out, "overall_c", *real.overall_c, *sim.overall_c);
    }
  }
  return 0;
}

// --------------------------------------------------------------- simulate --

int cmd_simulate(const CommonArgs& common) {
  RunConfig cfg = merge_config(common);
  if (cfg.data_dir.empty()) throw ConfigError("simulate needs --data (prepared dataset directory)");
  const std::string target = !cfg.out_dir.empty() ? cfg.out_dir : cfg.data_dir;

  Dataset ds = read_dataset(cfg.data_dir);
  Rng rng(Rng::mix(cfg.seed, kSaltSimulate));
  SimulateStats stats;
  ds.simulated_inputs = simulate_test_set(ds.test, ds.vocab, cfg.model.max_raw_len, rng, &stats);
  write_simulated_inputs(ds, target);

  const double total =
      static_cast<double>(std::max<long>(stats.keep + stats.insert + stats.drop, 1));
  char line[160];
  std::snprintf(line, sizeof(line),
                "simulated %zu test inputs: keep %.2f%%, insert %.2f%%, delete %.2f%%\n",
                ds.simulated_inputs.size(), 100.0 * static_cast<double>(stats.keep) / total,
                100.0 * static_cast<double>(stats.insert) / total,
                100.0 * static_cast<double>(stats.drop) / total);
  std::cout << line;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-correcting sequential recommender toolchain"};
  app.require_subcommand(1);

  CommonArgs prep_common;
  std::string prep_input;
  int prep_min_count = 5;
  std::optional<int> prep_negatives;
  CLI::App* prep = app.add_subcommand("prepare", "build a dataset directory from a raw log");
  add_common(prep, prep_common, false);
  prep->add_option("--input", prep_input, "interaction log (user<TAB>item<TAB>timestamp)")
      ->required()
      ->check(CLI::ExistingFile);
  prep->add_option("--min-count", prep_min_count, "minimum interactions per user and item");
  prep->add_option("--negatives", prep_negatives, "negatives sampled per evaluation instance");

  CommonArgs train_common;
  std::string train_variant, train_op_set;
  std::optional<int> train_epochs;
  CLI::App* tr = app.add_subcommand("train", "train a model on a prepared dataset");
  add_common(tr, train_common, true);
  tr->add_option("--variant", train_variant, "full, dc_only, ic_only, recommender_only");
  tr->add_option("--op-set", train_op_set, "full, delete_keep, insert_keep");
  tr->add_option("--epochs", train_epochs, "override training epochs");

  CommonArgs cor_common;
  std::string cor_checkpoint, cor_input, cor_op_set, cor_force;
  CLI::App* cor = app.add_subcommand("correct", "rewrite sequences with a trained corrector");
  add_common(cor, cor_common, false);
  cor->add_option("--checkpoint", cor_checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cor->add_option("--input", cor_input, "sequence file, space-separated item ids per line")
      ->required()
      ->check(CLI::ExistingFile);
  cor->add_option("--op-set", cor_op_set, "full, delete_keep, insert_keep");
  cor->add_option("--force-op", cor_force)->group("");

  CommonArgs eval_common;
  std::string eval_checkpoint, eval_mode = "corrected", eval_test_set = "real";
  std::string eval_op_set, eval_force;
  CLI::App* ev = app.add_subcommand("evaluate", "rank held-out items and write report files");
  add_common(ev, eval_common, true);
  ev->add_option("--checkpoint", eval_checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--mode", eval_mode, "raw or corrected (default corrected)");
  ev->add_option("--test-set", eval_test_set, "real, simulated, or both (default real)");
  ev->add_option("--op-set", eval_op_set, "full, delete_keep, insert_keep");
  ev->add_option("--force-op", eval_force)->group("");

  CommonArgs sim_common;
  CLI::App* sim = app.add_subcommand("simulate", "disturb the real test inputs for robustness runs");
  add_common(sim, sim_common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prep->parsed()) return cmd_prepare(prep_common, prep_input, prep_min_count, prep_negatives);
    if (tr->parsed()) return cmd_train(train_common, train_variant, train_op_set, train_epochs);
    if (cor->parsed())
      return cmd_correct(cor_common, cor_checkpoint, cor_input, cor_op_set, cor_force);
    if (ev->parsed())
      return cmd_evaluate(eval_common, eval_checkpoint, eval_mode, eval_test_set, eval_op_set,
                          eval_force);
    if (sim->parsed()) return cmd_simulate(sim_common);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
