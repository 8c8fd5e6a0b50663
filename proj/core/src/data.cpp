#include "steamrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace steamrec {

namespace {

std::string location(const std::filesystem::path& file, size_t line_no) {
  return file.string() + ":" + std::to_string(line_no);
}

int64_t parse_timestamp(const std::string& text, const std::filesystem::path& file,
                        size_t line_no) {
  int64_t value = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError(location(file, line_no) + ": invalid timestamp '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<Interaction> load_interactions(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open interaction log " + file.string());
  std::vector<Interaction> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t tab1 = line.find('\t');
    const size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos ||
        line.find('\t', tab2 + 1) != std::string::npos) {
      throw ParseError(location(file, line_no) +
                       ": expected exactly three tab-separated fields");
    }
    Interaction rec;
    rec.user = line.substr(0, tab1);
    rec.item = line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (rec.user.empty() || rec.item.empty()) {
      throw ParseError(location(file, line_no) + ": empty user or item field");
    }
    rec.timestamp = parse_timestamp(line.substr(tab2 + 1), file, line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<Interaction> five_core_filter(std::vector<Interaction> records, int min_count) {
  if (min_count < 1) {
    throw ConfigError("five_core_filter: min_count must be >= 1, got " +
                      std::to_string(min_count));
  }
  bool changed = true;
  while (changed) {
    std::unordered_map<std::string, int> user_count, item_count;
    for (const Interaction& r : records) {
      ++user_count[r.user];
      ++item_count[r.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(records.size());
    for (Interaction& r : records) {
      if (user_count[r.user] >= min_count && item_count[r.item] >= min_count) {
        kept.push_back(std::move(r));
      }
    }
    changed = kept.size() != records.size();
    records = std::move(kept);
  }
  return records;
}

SequenceData build_sequences(const std::vector<Interaction>& records, int max_len) {
  if (max_len < 1) {
    throw ConfigError("build_sequences: max_len must be >= 1, got " + std::to_string(max_len));
  }
  SequenceData out;
  struct Row {
    int64_t timestamp;
    const std::string* item;
  };
  std::unordered_map<std::string, int> user_index;
  std::vector<std::vector<Row>> per_user;
  for (const Interaction& r : records) {
    auto [it, inserted] = user_index.try_emplace(r.user, static_cast<int>(out.user_keys.size()));
    if (inserted) {
      out.user_keys.push_back(r.user);
      per_user.emplace_back();
    }
    per_user[static_cast<size_t>(it->second)].push_back(Row{r.timestamp, &r.item});
  }
  for (auto& rows : per_user) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.timestamp < b.timestamp; });
  }
  // Dense item ids by first appearance over the chronological per-user
  // streams (user order = first appearance in the log).
  std::unordered_map<std::string, int> item_index;
  for (const auto& rows : per_user) {
    for (const Row& row : rows) {
      auto [it, inserted] =
          item_index.try_emplace(*row.item, static_cast<int>(out.item_keys.size()) + 1);
      if (inserted) out.item_keys.push_back(*row.item);
    }
  }
  out.vocab.item_count = static_cast<int>(out.item_keys.size());
  out.action_count = static_cast<long>(records.size());
  out.sequences.reserve(per_user.size());
  out.history.reserve(per_user.size());
  for (const auto& rows : per_user) {
    std::vector<int> full;
    full.reserve(rows.size());
    for (const Row& row : rows) full.push_back(item_index[*row.item]);
    std::vector<int> hist = full;
    std::sort(hist.begin(), hist.end());
    hist.erase(std::unique(hist.begin(), hist.end()), hist.end());
    out.history.push_back(std::move(hist));
    if (static_cast<int>(full.size()) > max_len) {
      full.erase(full.begin(), full.end() - max_len);
    }
    out.sequences.push_back(std::move(full));
  }
  return out;
}

SplitResult leave_one_out_split(const std::vector<std::vector<int>>& sequences) {
  SplitResult out;
  for (size_t i = 0; i < sequences.size(); ++i) {
    const std::vector<int>& seq = sequences[i];
    if (seq.size() < 3) {
      ++out.skipped;
      continue;
    }
    const size_t n = seq.size();
    std::vector<int> train(seq.begin(), seq.end() - 2);
    EvalInstance valid;
    valid.input = train;
    valid.ground_truth = seq[n - 2];
    EvalInstance test;
    test.input.assign(seq.begin(), seq.end() - 1);
    test.ground_truth = seq[n - 1];
    out.train.push_back(std::move(train));
    out.valid.push_back(std::move(valid));
    out.test.push_back(std::move(test));
    out.user_index.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> sample_negatives(const std::vector<int>& history_sorted,
                                  const Vocabulary& vocab, int count, Rng& rng) {
  if (count < 0) throw ConfigError("sample_negatives: negative count " + std::to_string(count));
  const auto in_history = [&](int id) {
    return std::binary_search(history_sorted.begin(), history_sorted.end(), id);
  };
  const int eligible = vocab.item_count - static_cast<int>(history_sorted.size());
  if (eligible < count) {
    throw ConfigError("sample_negatives: need " + std::to_string(count) +
                      " items but only " + std::to_string(eligible) +
                      " lie outside the user history");
  }
  std::vector<int> result;
  result.reserve(static_cast<size_t>(count));
  if (eligible <= 2 * count) {
    // Dense regime: materialize the complement and partially shuffle.
    std::vector<int> pool;
    pool.reserve(static_cast<size_t>(eligible));
    for (int id = 1; id <= vocab.item_count; ++id) {
      if (!in_history(id)) pool.push_back(id);
    }
    for (int i = 0; i < count; ++i) {
      const int j = i + rng.below(static_cast<int>(pool.size()) - i);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      result.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    std::unordered_set<int> drawn;
    while (static_cast<int>(result.size()) < count) {
      const int id = 1 + rng.below(vocab.item_count);
      if (in_history(id) || !drawn.insert(id).second) continue;
      result.push_back(id);
    }
  }
  return result;
}

DatasetStats compute_stats(const SequenceData& data) {
  DatasetStats s;
  s.users = static_cast<int>(data.user_keys.size());
  s.items = data.vocab.item_count;
  s.actions = data.action_count;
  if (s.users > 0) s.avg_length = static_cast<double>(s.actions) / s.users;
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  if (cells > 0) s.sparsity_percent = 100.0 * (1.0 - static_cast<double>(s.actions) / cells);
  return s;
}

std::string format_stats(const DatasetStats& stats) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "users %d\nitems %d\nactions %ld\navg_length %.1f\nsparsity %.2f%%\n",
                stats.users, stats.items, stats.actions, stats.avg_length,
                stats.sparsity_percent);
  return std::string(buf);
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

void write_sequences(const std::filesystem::path& p,
                     const std::vector<std::vector<int>>& rows) {
  std::ofstream out = open_out(p);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ' ';
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + p.string());
}

std::vector<std::vector<int>> read_sequences(const std::filesystem::path& p,
                                             bool allow_empty_rows) {
  std::ifstream in = open_in(p);
  std::vector<std::vector<int>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<int> row;
    std::istringstream ss(line);
    int v = 0;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) {
      throw ParseError(location(p, line_no) + ": invalid integer token");
    }
    if (row.empty() && !allow_empty_rows) {
      throw ParseError(location(p, line_no) + ": empty sequence row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_keys(const std::filesystem::path& p, const std::vector<std::string>& keys,
                int first_id) {
  std::ofstream out = open_out(p);
  for (size_t i = 0; i < keys.size(); ++i) {
    out << (static_cast<int>(i) + first_id) << '\t' << keys[i] << '\n';
  }
  if (!out) throw IoError("short write to " + p.string());
}

std::vector<std::string> read_keys(const std::filesystem::path& p, int first_id) {
  std::ifstream in = open_in(p);
  std::vector<std::string> keys;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(location(p, line_no) + ": expected id<TAB>key");
    }
    const int expected = static_cast<int>(keys.size()) + first_id;
    if (line.substr(0, tab) != std::to_string(expected)) {
      throw ParseError(location(p, line_no) + ": ids must be dense, expected " +
                       std::to_string(expected));
    }
    keys.push_back(line.substr(tab + 1));
  }
  return keys;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string());
  write_keys(dir / "items.tsv", ds.item_keys, 1);
  write_keys(dir / "users.tsv", ds.user_keys, 0);
  write_sequences(dir / "train.txt", ds.train);

  const auto write_eval = [&](const std::filesystem::path& inputs,
                              const std::filesystem::path& negatives,
                              const std::vector<EvalInstance>& instances) {
    std::vector<std::vector<int>> in_rows, neg_rows;
    in_rows.reserve(instances.size());
    neg_rows.reserve(instances.size());
    for (const EvalInstance& e : instances) {
      in_rows.push_back(e.input);
      std::vector<int> row;
      row.reserve(e.negatives.size() + 1);
      row.push_back(e.ground_truth);
      row.insert(row.end(), e.negatives.begin(), e.negatives.end());
      neg_rows.push_back(std::move(row));
    }
    write_sequences(inputs, in_rows);
    write_sequences(negatives, neg_rows);
  };
  write_eval(dir / "valid.txt", dir / "valid_negatives.txt", ds.valid);
  write_eval(dir / "test.txt", dir / "test_negatives.txt", ds.test);
  if (ds.has_simulated()) write_simulated_inputs(ds, dir);
}

void write_simulated_inputs(const Dataset& ds, const std::filesystem::path& dir) {
  if (ds.simulated_inputs.size() != ds.test.size()) {
    throw ContractError("simulated inputs cover " + std::to_string(ds.simulated_inputs.size()) +
                        " rows but the test split has " + std::to_string(ds.test.size()));
  }
  write_sequences(dir / "test_simulated.txt", ds.simulated_inputs);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.item_keys = read_keys(dir / "items.tsv", 1);
  ds.user_keys = read_keys(dir / "users.tsv", 0);
  ds.vocab.item_count = static_cast<int>(ds.item_keys.size());
  ds.train = read_sequences(dir / "train.txt", false);

  const auto read_eval = [&](const std::filesystem::path& inputs,
                             const std::filesystem::path& negatives) {
    const auto in_rows = read_sequences(inputs, false);
    const auto neg_rows = read_sequences(negatives, false);
    if (in_rows.size() != neg_rows.size()) {
      throw ParseError(inputs.string() + " and " + negatives.string() +
                       " have different row counts");
    }
    std::vector<EvalInstance> instances(in_rows.size());
    for (size_t i = 0; i < in_rows.size(); ++i) {
      if (neg_rows[i].empty()) {
        throw ParseError(negatives.string() + ": row " + std::to_string(i + 1) +
                         " is missing the ground truth");
      }
      instances[i].input = in_rows[i];
      instances[i].ground_truth = neg_rows[i][0];
      instances[i].negatives.assign(neg_rows[i].begin() + 1, neg_rows[i].end());
    }
    return instances;
  };
  ds.valid = read_eval(dir / "valid.txt", dir / "valid_negatives.txt");
  ds.test = read_eval(dir / "test.txt", dir / "test_negatives.txt");
  if (ds.train.size() != ds.valid.size() || ds.train.size() != ds.test.size()) {
    throw ParseError("dataset in " + dir.string() + " has inconsistent split row counts");
  }
  const std::filesystem::path sim = dir / "test_simulated.txt";
  if (std::filesystem::exists(sim)) {
    ds.simulated_inputs = read_sequences(sim, false);
    if (ds.simulated_inputs.size() != ds.test.size()) {
      throw ParseError(sim.string() + " row count does not match test.txt");
    }
  }
  const auto check_ids = [&](const std::vector<int>& row, const char* what) {
    for (int id : row) {
      if (!ds.vocab.is_real(id)) {
        throw ParseError(std::string(what) + " in " + dir.string() +
                         " contains non-item id " + std::to_string(id));
      }
    }
  };
  for (const auto& row : ds.train) check_ids(row, "train.txt");
  for (const auto& e : ds.valid) {
    check_ids(e.input, "valid.txt");
    check_ids(e.negatives, "valid_negatives.txt");
    check_ids({e.ground_truth}, "valid_negatives.txt");
  }
  for (const auto& e : ds.test) {
    check_ids(e.input, "test.txt");
    check_ids(e.negatives, "test_negatives.txt");
    check_ids({e.ground_truth}, "test_negatives.txt");
  }
  for (const auto& row : ds.simulated_inputs) check_ids(row, "test_simulated.txt");
  return ds;
}

}  // namespace steamrec
