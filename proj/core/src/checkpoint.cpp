#include "steamrec/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace steamrec {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'E', 'A', 'M', 'R', 'E', 'C'};
constexpr uint32_t kVersion = 1;

const std::array<uint32_t, 256>& crc_table() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

// Accumulates bytes into a buffer; everything is CRC'd and written at once,
// which keeps partial writes off disk together with the rename step.
struct ByteSink {
  std::vector<unsigned char> bytes;

  void put(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    put(b, 4);
  }
  void put_f32(float v) {
    static_assert(sizeof(float) == 4);
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(u);
  }
};

struct ByteSource {
  const std::vector<unsigned char>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint file truncated");
  }
  void get(void* out, size_t n) {
    need(n);
    std::memcpy(out, bytes.data() + pos, n);
    pos += n;
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(bytes[pos]) |
                 static_cast<uint32_t>(bytes[pos + 1]) << 8 |
                 static_cast<uint32_t>(bytes[pos + 2]) << 16 |
                 static_cast<uint32_t>(bytes[pos + 3]) << 24;
    pos += 4;
    return v;
  }
  float get_f32() {
    const uint32_t u = get_u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string get_string(uint32_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    return s;
  }
};

}  // namespace

uint32_t crc32(std::span<const unsigned char> bytes, uint32_t seed) {
  const auto& table = crc_table();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (unsigned char b : bytes) c = table[(c ^ b) & 0xff] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ByteSink sink;
  sink.put(kMagic, sizeof(kMagic));
  sink.put_u32(kVersion);

  const std::string config_text = ckpt.config.to_text();
  sink.put_u32(static_cast<uint32_t>(config_text.size()));
  sink.put(config_text.data(), config_text.size());

  sink.put_u32(static_cast<uint32_t>(ckpt.vocab.item_count));

  const auto entries = ckpt.params.entries();
  sink.put_u32(static_cast<uint32_t>(entries.size()));
  for (const auto& [name, mat] : entries) {
    sink.put_u32(static_cast<uint32_t>(name.size()));
    sink.put(name.data(), name.size());
    sink.put_u32(static_cast<uint32_t>(mat->rows));
    sink.put_u32(static_cast<uint32_t>(mat->cols));
    for (double v : mat->data) sink.put_f32(static_cast<float>(v));
  }

  sink.put_u32(crc32(sink.bytes));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(sink.bytes.data()),
              static_cast<std::streamsize>(sink.bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  in.close();

  if (bytes.size() < sizeof(kMagic) + 8) throw CheckpointError("checkpoint file truncated");
  const uint32_t stored_crc = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                              static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
                              static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
                              static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
  const uint32_t actual_crc =
      crc32(std::span<const unsigned char>(bytes.data(), bytes.size() - 4));
  if (stored_crc != actual_crc) throw CheckpointError("checkpoint CRC mismatch");

  ByteSource src{bytes};
  char magic[sizeof(kMagic)];
  src.get(magic, sizeof(kMagic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const uint32_t version = src.get_u32();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  const uint32_t config_len = src.get_u32();
  const std::string config_text = src.get_string(config_len);

  Checkpoint ckpt;
  ckpt.config = RunConfig::from_text(config_text);
  ckpt.config.finalize();
  ckpt.vocab.item_count = static_cast<int>(src.get_u32());
  if (ckpt.vocab.item_count < 1) throw CheckpointError("checkpoint has no items");

  // Build parameters from the stored architecture, then fill each block in
  // declaration order; the file must match exactly.
  Rng init_rng(0);
  ckpt.params = ModelParameters::init(ckpt.config.model, ckpt.vocab, init_rng);
  auto entries = ckpt.params.entries();

  const uint32_t block_count = src.get_u32();
  if (block_count != entries.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(block_count) +
                          " blocks, model needs " + std::to_string(entries.size()));
  }

  ModelParameters expected_params;
  std::vector<std::pair<std::string, Matrix*>> expected_entries;
  if (expected) {
    expected_params = ModelParameters::init(*expected, ckpt.vocab, init_rng);
    expected_entries = expected_params.entries();
    if (expected_entries.size() != entries.size()) {
      throw CheckpointError("checkpoint architecture does not match expected configuration");
    }
  }

  for (size_t i = 0; i < entries.size(); ++i) {
    auto& [name, mat] = entries[i];
    const uint32_t name_len = src.get_u32();
    const std::string stored_name = src.get_string(name_len);
    if (stored_name != name) {
      throw CheckpointError("checkpoint block " + std::to_string(i) + " is '" + stored_name +
                            "', expected '" + name + "'");
    }
    const int rows = static_cast<int>(src.get_u32());
    const int cols = static_cast<int>(src.get_u32());
    if (rows != mat->rows || cols != mat->cols) {
      if (expected) {
        const Matrix* want = expected_entries[i].second;
        throw CheckpointError("block " + name + ": expected " + std::to_string(want->rows) +
                              "x" + std::to_string(want->cols) + ", found " +
                              std::to_string(rows) + "x" + std::to_string(cols));
      }
      throw CheckpointError("block " + name + ": stored shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " disagrees with its configuration (" +
                            std::to_string(mat->rows) + "x" + std::to_string(mat->cols) + ")");
    }
    for (double& v : mat->data) v = static_cast<double>(src.get_f32());
  }

  if (src.pos != bytes.size() - 4) throw CheckpointError("checkpoint has trailing bytes");

  if (expected) {
    for (size_t i = 0; i < entries.size(); ++i) {
      const Matrix* have = entries[i].second;
      const Matrix* want = expected_entries[i].second;
      if (have->rows != want->rows || have->cols != want->cols) {
        throw CheckpointError("block " + entries[i].first + ": expected " +
                              std::to_string(want->rows) + "x" + std::to_string(want->cols) +
                              ", found " + std::to_string(have->rows) + "x" +
                              std::to_string(have->cols));
      }
    }
  }

  return ckpt;
}

}  // namespace steamrec
