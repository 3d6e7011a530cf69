#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace cvrt {

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 tensors.
struct Tensor {
  int rows{0};
  int cols{0};
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  Tensor(int r, int c, std::vector<double> vals) : rows(r), cols(c), v(std::move(vals)) {
    assert(v.size() == static_cast<size_t>(r) * c);
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor row(std::vector<double> vals) {
    const int n = static_cast<int>(vals.size());
    return Tensor(1, n, std::move(vals));
  }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace cvrt
