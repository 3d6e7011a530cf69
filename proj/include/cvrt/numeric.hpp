#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cvrt/rng.hpp"
#include "cvrt/tensor.hpp"

namespace cvrt {

// Numerically sensitive primitives. Layer norm, L2 normalization and masked
// softmax always compute in full precision internally, whatever precision
// class their inputs were rendered at.

inline constexpr double kLayerNormEps = 1e-6;  // added to the variance
inline constexpr double kL2NormEps = 1e-12;    // added under the square root

// x * sigmoid(1.702 x), applied elementwise.
double gelu_fast(double x);
double gelu_fast_grad(double x);
Tensor gelu_fast(const Tensor& x);

// Per-row zero mean / unit variance (population variance) followed by the
// affine gain/bias transform. gain and bias are 1 x cols.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Each row scaled to unit L2 norm; the zero row stays zero (epsilon guard).
Tensor l2_normalize_rows(const Tensor& x);

// Row-wise softmax over the positions where mask is nonzero. Masked entries
// get exactly zero probability. A fully masked row puts all mass on the
// self position (column r % cols for row r, matching the flattened
// [seqs*len, len] attention layout); attention masks always admit the
// diagonal anyway. mask may be empty, meaning nothing is masked.
Tensor softmax_masked(const Tensor& scores, const std::vector<uint8_t>& mask);

// Semi-orthogonal init: rows orthonormal when rows <= cols, columns
// orthonormal otherwise. Deterministic in the seed.
Tensor orthogonal_init(int rows, int cols, uint64_t seed);

}  // namespace cvrt
