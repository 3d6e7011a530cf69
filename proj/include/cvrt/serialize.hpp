#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cvrt/model.hpp"

namespace cvrt {

inline constexpr uint32_t kModelFormatVersion = 1;

using Digest = std::array<uint8_t, 32>;

Digest sha256_bytes(const void* data, size_t len);
Digest sha256_file(const std::string& path);  // throws DataError if unreadable
std::string hex_digest(const Digest& d);

// Little-endian container: magic "CVRT", u32 version, 32-byte vocab digest,
// u64-length-prefixed JSON config, u32 tensor count, then per-tensor records
// in parameter creation order. Embedding tables store their QuantRange as two
// f64 plus one code byte per element; everything else stores binary16 bit
// patterns. Codes cached from a previous load are written back verbatim.
void save_model(const Model& m, const Digest& vocab_digest, const std::string& path);

struct LoadedModel {
  Model model;
  Digest vocab_digest{};
};

// Throws DataError on unreadable, malformed, truncated, or wrong-version
// files. Embedding params keep their on-disk codes so encodings reproduce
// bit-for-bit; shadows are rebuilt from the stored low-precision values.
LoadedModel load_model(const std::string& path);

// Additionally rejects files whose recorded vocab digest differs.
LoadedModel load_model(const std::string& path, const Digest& expect_vocab);

}  // namespace cvrt
