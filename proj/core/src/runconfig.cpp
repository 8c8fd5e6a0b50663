#include "steamrec/runconfig.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace steamrec {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  // from_chars<double> is incomplete on some standard libraries; strtod with
  // full-consumption checking is equivalent here.
  if (value.empty()) throw ConfigError("config key '" + key + "': empty value");
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

// Shortest decimal form that parses back to the same double, so that
// from_text(to_text()) is the identity.
std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ContractError("double formatting failed");
  return std::string(buf, ptr);
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "dc_only") return Variant::dc_only;
  if (name == "ic_only") return Variant::ic_only;
  if (name == "recommender_only") return Variant::recommender_only;
  throw ConfigError("unknown variant '" + name +
                    "' (expected full, dc_only, ic_only, recommender_only)");
}

OpSet parse_op_set(const std::string& name) {
  if (name == "full") return OpSet::full;
  if (name == "delete_keep") return OpSet::delete_keep;
  if (name == "insert_keep") return OpSet::insert_keep;
  throw ConfigError("unknown op_set '" + name + "' (expected full, delete_keep, insert_keep)");
}

void RunConfig::apply_entry(const std::string& key, const std::string& value) {
  if (key == "model.embed_dim") model.embed_dim = parse_number<int>(key, value);
  else if (key == "model.heads") model.heads = parse_number<int>(key, value);
  else if (key == "model.layers_encoder") model.layers_encoder = parse_number<int>(key, value);
  else if (key == "model.layers_corrector") model.layers_corrector = parse_number<int>(key, value);
  else if (key == "model.layers_recommender") model.layers_recommender = parse_number<int>(key, value);
  else if (key == "model.dropout") model.dropout = parse_double(key, value);
  else if (key == "model.max_raw_len") model.max_raw_len = parse_number<int>(key, value);
  else if (key == "model.max_corrected_len") model.max_corrected_len = parse_number<int>(key, value);
  else if (key == "model.max_insert_decode") model.max_insert_decode = parse_number<int>(key, value);
  else if (key == "model.position_table_rows") model.position_table_rows = parse_number<int>(key, value);
  else if (key == "train.epochs") train.epochs = parse_number<int>(key, value);
  else if (key == "train.batch_size") train.batch_size = parse_number<int>(key, value);
  else if (key == "train.learning_rate") train.learning_rate = parse_double(key, value);
  else if (key == "train.clip_lo") train.clip_lo = parse_double(key, value);
  else if (key == "train.clip_hi") train.clip_hi = parse_double(key, value);
  else if (key == "train.variant") train.variant = parse_variant(value);
  else if (key == "train.op_set") train.op_set = parse_op_set(value);
  else if (key == "corruption.p_keep") corruption.p_keep = parse_double(key, value);
  else if (key == "corruption.p_insert") corruption.p_insert = parse_double(key, value);
  else if (key == "corruption.p_delete") corruption.p_delete = parse_double(key, value);
  else if (key == "corruption.p_mask") corruption.p_mask = parse_double(key, value);
  else if (key == "corruption.max_run") corruption.max_run = parse_number<int>(key, value);
  else if (key == "eval.negatives") eval_negatives = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<uint64_t>(key, value);
  else if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    apply_entry(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config text line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    cfg.apply_entry(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "model.embed_dim = " << model.embed_dim << "\n";
  out << "model.heads = " << model.heads << "\n";
  out << "model.layers_encoder = " << model.layers_encoder << "\n";
  out << "model.layers_corrector = " << model.layers_corrector << "\n";
  out << "model.layers_recommender = " << model.layers_recommender << "\n";
  out << "model.dropout = " << fmt_double(model.dropout) << "\n";
  out << "model.max_raw_len = " << model.max_raw_len << "\n";
  out << "model.max_corrected_len = " << model.max_corrected_len << "\n";
  out << "model.max_insert_decode = " << model.max_insert_decode << "\n";
  out << "model.position_table_rows = " << model.position_table_rows << "\n";
  out << "train.epochs = " << train.epochs << "\n";
  out << "train.batch_size = " << train.batch_size << "\n";
  out << "train.learning_rate = " << fmt_double(train.learning_rate) << "\n";
  out << "train.clip_lo = " << fmt_double(train.clip_lo) << "\n";
  out << "train.clip_hi = " << fmt_double(train.clip_hi) << "\n";
  out << "train.variant = " << variant_name(train.variant) << "\n";
  out << "train.op_set = " << op_set_name(train.op_set) << "\n";
  out << "corruption.p_keep = " << fmt_double(corruption.p_keep) << "\n";
  out << "corruption.p_insert = " << fmt_double(corruption.p_insert) << "\n";
  out << "corruption.p_delete = " << fmt_double(corruption.p_delete) << "\n";
  out << "corruption.p_mask = " << fmt_double(corruption.p_mask) << "\n";
  out << "corruption.max_run = " << corruption.max_run << "\n";
  out << "eval.negatives = " << eval_negatives << "\n";
  out << "seed = " << seed << "\n";
  out << "data_dir = " << data_dir << "\n";
  out << "out_dir = " << out_dir << "\n";
  return out.str();
}

void RunConfig::finalize() {
  train.seed = seed;
  model.validate();
  train.validate();
  corruption.validate();
  if (eval_negatives < 1) throw ConfigError("eval.negatives must be >= 1");
}

}  // namespace steamrec
