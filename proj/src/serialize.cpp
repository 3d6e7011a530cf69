#include "cvrt/serialize.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "cvrt/errors.hpp"
#include "cvrt/fp16.hpp"

namespace cvrt {

Digest sha256_bytes(const void* data, size_t len) {
  Digest out{};
  unsigned int n = 0;
  EVP_Digest(data, len, out.data(), &n, EVP_sha256(), nullptr);
  return out;
}

Digest sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  return sha256_bytes(bytes.data(), bytes.size());
}

std::string hex_digest(const Digest& d) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (uint8_t b : d) {
    out += hex[b >> 4];
    out += hex[b & 0xf];
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'C', 'V', 'R', 'T'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(std::string("model file truncated reading ") + what);
  return v;
}

void read_raw(std::istream& in, void* dst, size_t len, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(len));
  if (!in) throw DataError(std::string("model file truncated reading ") + what);
}

}  // namespace

void save_model(const Model& m, const Digest& vocab_digest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);

  out.write(kMagic, 4);
  write_pod<uint32_t>(out, kModelFormatVersion);
  out.write(reinterpret_cast<const char*>(vocab_digest.data()), vocab_digest.size());

  std::string cfg = m.cfg.to_json();
  write_pod<uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  write_pod<uint32_t>(out, static_cast<uint32_t>(m.params.params.size()));
  for (const Param& p : m.params.params) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<uint8_t>(out, static_cast<uint8_t>(p.prec));
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.shadow.rows));
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.shadow.cols));
    if (p.prec == Precision::embed8) {
      write_pod<double>(out, p.range.lo);
      write_pod<double>(out, p.range.hi);
      std::vector<uint8_t> codes =
          p.loaded_codes.empty() ? quantize_codes(p.shadow, p.range) : p.loaded_codes;
      out.write(reinterpret_cast<const char*>(codes.data()),
                static_cast<std::streamsize>(codes.size()));
    } else {
      for (double v : p.shadow.v) write_pod<uint16_t>(out, half_from_double(v));
    }
  }
  if (!out) throw DataError("failed writing " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);

  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path + " is not a model file");
  auto version = read_pod<uint32_t>(in, "version");
  if (version != kModelFormatVersion)
    throw DataError("unsupported model format version " + std::to_string(version));

  LoadedModel out;
  read_raw(in, out.vocab_digest.data(), out.vocab_digest.size(), "vocab digest");

  auto cfg_len = read_pod<uint64_t>(in, "config length");
  if (cfg_len > (1u << 20)) throw DataError("implausible config block size");
  std::string cfg_text(cfg_len, '\0');
  read_raw(in, cfg_text.data(), cfg_len, "config");
  try {
    out.model.cfg = ModelConfig::from_json(cfg_text);
    out.model.cfg.validate();
  } catch (const std::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }

  auto n_tensors = read_pod<uint32_t>(in, "tensor count");
  for (uint32_t t = 0; t < n_tensors; ++t) {
    auto name_len = read_pod<uint32_t>(in, "tensor name length");
    if (name_len > 4096) throw DataError("implausible tensor name length");
    std::string name(name_len, '\0');
    read_raw(in, name.data(), name_len, "tensor name");
    auto prec = read_pod<uint8_t>(in, "precision");
    if (prec > 1) throw DataError("unknown precision class in " + name);
    auto rows = read_pod<uint32_t>(in, "rows");
    auto cols = read_pod<uint32_t>(in, "cols");
    if (static_cast<uint64_t>(rows) * cols > (1ull << 32))
      throw DataError("implausible tensor shape in " + name);

    Param& p = out.model.params.add(name, Tensor(static_cast<int>(rows), static_cast<int>(cols)),
                                    static_cast<Precision>(prec));
    if (p.prec == Precision::embed8) {
      p.range.lo = read_pod<double>(in, "range lo");
      p.range.hi = read_pod<double>(in, "range hi");
      if (!(p.range.lo < p.range.hi)) throw DataError("bad quant range in " + name);
      p.loaded_codes.resize(static_cast<size_t>(rows) * cols);
      read_raw(in, p.loaded_codes.data(), p.loaded_codes.size(), "codes");
      p.shadow = dequantize_codes(p.loaded_codes, p.shadow.rows, p.shadow.cols, p.range);
    } else {
      for (double& v : p.shadow.v)
        v = half_to_double(read_pod<uint16_t>(in, "parameter bits"));
    }
  }
  return out;
}

LoadedModel load_model(const std::string& path, const Digest& expect_vocab) {
  LoadedModel lm = load_model(path);
  if (lm.vocab_digest != expect_vocab)
    throw DataError("model was trained against a different vocabulary (digest mismatch)");
  return lm;
}

}  // namespace cvrt
