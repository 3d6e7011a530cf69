#include "cvrt/numeric.hpp"

#include <Eigen/Dense>
#include <Eigen/QR>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

namespace cvrt {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

double gelu_fast(double x) {
  const double z = 1.702 * x;
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return x * s;
}

double gelu_fast_grad(double x) {
  const double z = 1.702 * x;
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return s + x * 1.702 * s * (1.0 - s);
}

Tensor gelu_fast(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.v) v = gelu_fast(v);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  assert(gain.cols == x.cols && bias.cols == x.cols);
  Tensor out(x.rows, x.cols);
  const int n = x.cols;
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.data() + static_cast<size_t>(r) * n;
    double* or_ = out.data() + static_cast<size_t>(r) * n;
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xr[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int c = 0; c < n; ++c) or_[c] = (xr[c] - mean) * inv * gain.v[c] + bias.v[c];
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  Tensor out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    const double* xr = x.data() + static_cast<size_t>(r) * x.cols;
    double* or_ = out.data() + static_cast<size_t>(r) * x.cols;
    double s = 0.0;
    for (int c = 0; c < x.cols; ++c) s += xr[c] * xr[c];
    const double inv = 1.0 / std::sqrt(s + kL2NormEps);
    for (int c = 0; c < x.cols; ++c) or_[c] = xr[c] * inv;
  }
  return out;
}

Tensor softmax_masked(const Tensor& scores, const std::vector<uint8_t>& mask) {
  assert(mask.empty() || mask.size() == scores.size());
  Tensor out(scores.rows, scores.cols);
  const int n = scores.cols;
  for (int r = 0; r < scores.rows; ++r) {
    const double* sr = scores.data() + static_cast<size_t>(r) * n;
    const uint8_t* mr = mask.empty() ? nullptr : mask.data() + static_cast<size_t>(r) * n;
    double* or_ = out.data() + static_cast<size_t>(r) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n; ++c)
      if (!mr || mr[c]) mx = std::max(mx, sr[c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      // Fully masked row: all mass on the self position (row r of sequence
      // block r/n attends to column r%n).
      for (int c = 0; c < n; ++c) or_[c] = 0.0;
      or_[r % n] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      if (!mr || mr[c]) {
        or_[c] = std::exp(sr[c] - mx);
        sum += or_[c];
      } else {
        or_[c] = 0.0;
      }
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < n; ++c)
      if (!mr || mr[c]) or_[c] *= inv;
  }
  return out;
}

Tensor orthogonal_init(int rows, int cols, uint64_t seed) {
  assert(rows >= 1 && cols >= 1);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Rng rng(seed);
  EMat g(big, small);
  for (int r = 0; r < big; ++r)
    for (int c = 0; c < small; ++c) g(r, c) = rng.gaussian();
  Eigen::HouseholderQR<EMat> qr(g);
  EMat q = qr.householderQ() * EMat::Identity(big, small);
  // Fix the signs so the factorization is unique.
  EMat rmat = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int c = 0; c < small; ++c)
    if (rmat(c, c) < 0.0) q.col(c) *= -1.0;

  Tensor out(rows, cols);
  if (rows <= cols) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out.at(r, c) = q(c, r);
  } else {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out.at(r, c) = q(r, c);
  }
  return out;
}

}  // namespace cvrt
