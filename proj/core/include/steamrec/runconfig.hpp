#pragma once

#include <filesystem>
#include <string>

#include "steamrec/corruption.hpp"
#include "steamrec/model.hpp"
#include "steamrec/training.hpp"

namespace steamrec {

// Merged run configuration: built-in defaults, overlaid by a config file,
// overlaid by command-line flags. Serialized as flat `key = value` text with
// '#' comments.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorruptionConfig corruption;
  int eval_negatives = 99;
  uint64_t seed = 42;
  std::string data_dir;
  std::string out_dir;

  // Applies one key/value pair; unknown keys and unparsable values are
  // ConfigErrors naming the key.
  void apply_entry(const std::string& key, const std::string& value);
  void apply_file(const std::filesystem::path& path);
  static RunConfig from_text(const std::string& text);

  // Full dump in fixed key order; from_text(to_text()) is the identity.
  std::string to_text() const;

  // Propagates the global seed into the training config and validates every
  // section.
  void finalize();
};

Variant parse_variant(const std::string& name);
OpSet parse_op_set(const std::string& name);

}  // namespace steamrec
