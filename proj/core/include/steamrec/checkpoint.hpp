#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "steamrec/model.hpp"
#include "steamrec/runconfig.hpp"

namespace steamrec {

// CRC-32 (reflected, polynomial 0xEDB88320), as used by zlib and PNG.
uint32_t crc32(std::span<const unsigned char> bytes, uint32_t seed = 0);

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  ModelParameters params;
};

// Binary layout, all integers little-endian:
//   magic "STEAMREC" (8 bytes), version u32
//   config text: length u32, bytes (RunConfig::to_text())
//   item_count u32
//   block_count u32, then per block:
//     name length u32, name bytes, rows u32, cols u32,
//     rows*cols float32 values in row-major order
//   crc32 u32 over everything before it
// Blocks are written in ModelParameters::entries() order and the loader
// requires exactly that order, so a file is valid for one architecture only.
// Writing goes to "<path>.tmp" first and renames into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// expected, when given, turns shape mismatches into a diagnostic naming the
// offending block instead of a generic corruption error.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

}  // namespace steamrec
