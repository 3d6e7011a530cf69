#include "cvrt/params.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "cvrt/fp16.hpp"

namespace cvrt {

QuantRange range_for(double lo_obs, double hi_obs) {
  const double m = std::max(0.1 * (hi_obs - lo_obs), 0.01);
  return {lo_obs - m, hi_obs + m};
}

QuantRange update_quant_range(const QuantRange& cur, double lo_obs, double hi_obs) {
  const double m = std::max(0.1 * (hi_obs - lo_obs), 0.01);
  if (lo_obs - m < cur.lo || hi_obs + m > cur.hi) return range_for(lo_obs, hi_obs);
  return cur;
}

std::vector<uint8_t> quantize_codes(const Tensor& shadow, const QuantRange& r,
                                    int64_t* clamped) {
  assert(r.lo < r.hi);
  const double inv_step = 255.0 / (r.hi - r.lo);
  std::vector<uint8_t> codes(shadow.size());
  for (size_t i = 0; i < shadow.size(); ++i) {
    double c = std::nearbyint((shadow.v[i] - r.lo) * inv_step);
    if (c < 0.0 || c > 255.0) {
      if (clamped) ++*clamped;
      c = c < 0.0 ? 0.0 : 255.0;
    }
    codes[i] = static_cast<uint8_t>(c);
  }
  return codes;
}

Tensor dequantize_codes(const std::vector<uint8_t>& codes, int rows, int cols,
                        const QuantRange& r) {
  assert(codes.size() == static_cast<size_t>(rows) * cols);
  const double step = r.step();
  Tensor out(rows, cols);
  for (size_t i = 0; i < codes.size(); ++i) out.v[i] = r.lo + codes[i] * step;
  return out;
}

Tensor quantize_dequantize(const Tensor& shadow, const QuantRange& r, int64_t* clamped) {
  return dequantize_codes(quantize_codes(shadow, r, clamped), shadow.rows, shadow.cols,
                          r);
}

Tensor Param::quantized_value() const {
  if (prec == Precision::embed8) {
    if (!loaded_codes.empty())
      return dequantize_codes(loaded_codes, shadow.rows, shadow.cols, range);
    return quantize_dequantize(shadow, range);
  }
  Tensor out = shadow;
  fp16_round_inplace(out.v);
  return out;
}

Param& ParamStore::add(const std::string& name, Tensor shadow, Precision prec) {
  if (by_name.count(name)) throw std::logic_error("duplicate parameter: " + name);
  by_name.emplace(name, static_cast<int>(params.size()));
  Param p;
  p.name = name;
  p.shadow = std::move(shadow);
  p.prec = prec;
  params.push_back(std::move(p));
  return params.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw std::logic_error("unknown parameter: " + name);
  return params[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw std::logic_error("unknown parameter: " + name);
  return params[it->second];
}

int64_t ParamStore::count(Precision prec) const {
  int64_t n = 0;
  for (const Param& p : params)
    if (p.prec == prec) n += static_cast<int64_t>(p.shadow.size());
  return n;
}

}  // namespace cvrt
