#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvrt/tensor.hpp"

namespace cvrt {

// Stored precision classes. Embedding tables hold 8-bit codes on disk and in
// the quantized forward pass; every other parameter is a 16-bit cast of its
// full-precision shadow.
enum class Precision : uint8_t { embed8 = 0, param16 = 1 };

struct QuantRange {
  double lo = -1.0;
  double hi = 1.0;
  double step() const { return (hi - lo) / 255.0; }
};

// Margin m = max(10% of the observed span, 0.01).
QuantRange range_for(double lo_obs, double hi_obs);

// Growth rule for the dynamic range: the range becomes [lo'-m, hi'+m]
// whenever observed values escape it or come within the margin of an edge;
// otherwise it is kept.
QuantRange update_quant_range(const QuantRange& cur, double lo_obs, double hi_obs);

// code = round-half-even((v - lo)/step), clamped to [0,255]. Out-of-range
// inputs clamp and bump *clamped when given.
std::vector<uint8_t> quantize_codes(const Tensor& shadow, const QuantRange& r,
                                    int64_t* clamped = nullptr);
Tensor dequantize_codes(const std::vector<uint8_t>& codes, int rows, int cols,
                        const QuantRange& r);
Tensor quantize_dequantize(const Tensor& shadow, const QuantRange& r,
                           int64_t* clamped = nullptr);

// One learnable tensor: the optimizer updates `shadow`; computations see the
// rendering that matches the precision class. `loaded_codes` caches the
// exact on-disk codes after a load so reloaded models reproduce encodings
// bit-for-bit; any training step invalidates it.
struct Param {
  std::string name;
  Tensor shadow;
  Precision prec = Precision::param16;
  QuantRange range;                   // embed8 only
  std::vector<uint8_t> loaded_codes;  // embed8 only, set by the loader

  // The values the forward pass consumes under quantized execution.
  Tensor quantized_value() const;
};

struct ParamStore {
  std::vector<Param> params;  // creation order is the serialization order
  std::unordered_map<std::string, int> by_name;

  Param& add(const std::string& name, Tensor shadow, Precision prec);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool has(const std::string& name) const { return by_name.count(name) > 0; }

  int64_t count(Precision prec) const;  // total elements in that class
};

}  // namespace cvrt
