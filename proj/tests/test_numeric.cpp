#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cvrt/fp16.hpp"
#include "cvrt/numeric.hpp"
#include "cvrt/rng.hpp"

using namespace cvrt;

TEST_CASE("gelu_fast values") {
  CHECK(gelu_fast(0.0) == 0.0);
  CHECK(gelu_fast(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.702))).epsilon(1e-12));
  CHECK(gelu_fast(1.0) == doctest::Approx(0.8458).epsilon(1e-4));
  CHECK(gelu_fast(10.0) == doctest::Approx(10.0).epsilon(1e-7));
  CHECK(std::abs(gelu_fast(-10.0)) < 1e-6);
}

TEST_CASE("gelu_fast_grad matches finite differences") {
  const double h = 1e-6;
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.3, 1.0, 4.0}) {
    const double fd = (gelu_fast(x + h) - gelu_fast(x - h)) / (2 * h);
    CHECK(gelu_fast_grad(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("layer_norm removes mean and fixes variance") {
  Tensor gain = Tensor::row({1, 1, 1, 1});
  Tensor bias = Tensor::row({0, 0, 0, 0});

  Tensor constant(1, 4);
  constant.fill(7.25);
  Tensor out = layer_norm(constant, gain, bias);
  for (double v : out.v) CHECK(v == 0.0);

  Tensor pm = Tensor::row({1.0, -1.0, 1.0, -1.0});
  out = layer_norm(pm, gain, bias);
  const double expect = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  CHECK(out.v[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(out.v[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(out.v[1] == doctest::Approx(-1.0).epsilon(1e-5));

  Rng rng(11);
  Tensor x(5, 16);
  for (double& v : x.v) v = rng.gaussian() * 3 + 1;
  Tensor g16 = Tensor::row(std::vector<double>(16, 1.0));
  Tensor b16 = Tensor::row(std::vector<double>(16, 0.0));
  out = layer_norm(x, g16, b16);
  for (int r = 0; r < out.rows; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 16; ++c) mean += out.at(r, c);
    mean /= 16;
    for (int c = 0; c < 16; ++c) var += (out.at(r, c) - mean) * (out.at(r, c) - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }

  Tensor g2 = Tensor::row({2.0, 0.5, 2.0, 0.5});
  Tensor b2 = Tensor::row({1.0, 1.0, 1.0, 1.0});
  out = layer_norm(pm, g2, b2);
  CHECK(out.v[0] == doctest::Approx(2.0 * expect + 1.0).epsilon(1e-12));
  CHECK(out.v[1] == doctest::Approx(-0.5 * expect + 1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize_rows") {
  Tensor x = Tensor::row({3.0, 4.0});
  Tensor out = l2_normalize_rows(x);
  CHECK(out.v[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(out.v[1] == doctest::Approx(0.8).epsilon(1e-9));

  Tensor unit = Tensor::row({0.0, 1.0, 0.0});
  out = l2_normalize_rows(unit);
  CHECK(out.v[1] == doctest::Approx(1.0).epsilon(1e-9));

  Tensor zero(2, 3);
  out = l2_normalize_rows(zero);
  for (double v : out.v) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.0);
  }

  Rng rng(5);
  Tensor r(4, 9);
  for (double& v : r.v) v = rng.gaussian();
  out = l2_normalize_rows(r);
  for (int i = 0; i < out.rows; ++i) {
    double s = 0;
    for (int c = 0; c < out.cols; ++c) s += out.at(i, c) * out.at(i, c);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("softmax_masked examples") {
  Tensor s = Tensor::row({0.0, 0.0, 0.0});
  Tensor p = softmax_masked(s, {});
  for (double v : p.v) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor s2 = Tensor::row({5.0, 0.0});
  p = softmax_masked(s2, {1, 0});
  CHECK(p.v[0] == 1.0);
  CHECK(p.v[1] == 0.0);

  Tensor s3 = Tensor::row({1.0, 2.0, 3.0});
  p = softmax_masked(s3, {});
  CHECK(p.v[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(p.v[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p.v[2] == doctest::Approx(0.6652).epsilon(1e-3));
}

TEST_CASE("softmax_masked properties") {
  Rng rng(77);
  Tensor s(8, 4);
  for (double& v : s.v) v = rng.gaussian() * 4;
  std::vector<uint8_t> mask(s.size());
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.6;
  // Row 5 fully masked on purpose.
  for (int c = 0; c < 4; ++c) mask[5 * 4 + c] = 0;
  Tensor p = softmax_masked(s, mask);
  for (int r = 0; r < p.rows; ++r) {
    double sum = 0;
    for (int c = 0; c < p.cols; ++c) {
      sum += p.at(r, c);
      if (r != 5 && !mask[static_cast<size_t>(r) * 4 + c]) CHECK(p.at(r, c) == 0.0);
      CHECK(p.at(r, c) >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  // The fully masked row fell back to its self position.
  CHECK(p.at(5, 5 % 4) == 1.0);
}

TEST_CASE("stable ops compute internally in full precision") {
  // Inputs that went through a 16-bit cast give bit-identical results
  // whichever representation carried them there.
  Rng rng(3);
  Tensor x(3, 8);
  for (double& v : x.v) v = rng.gaussian();
  Tensor x16 = x;
  fp16_round_inplace(x16.v);
  Tensor x16_again = x16;
  fp16_round_inplace(x16_again.v);  // idempotent cast
  Tensor gain = Tensor::row(std::vector<double>(8, 1.0));
  Tensor bias = Tensor::row(std::vector<double>(8, 0.0));

  CHECK(layer_norm(x16, gain, bias).v == layer_norm(x16_again, gain, bias).v);
  CHECK(l2_normalize_rows(x16).v == l2_normalize_rows(x16_again).v);
  CHECK(softmax_masked(x16, {}).v == softmax_masked(x16_again, {}).v);
}

TEST_CASE("orthogonal_init") {
  auto gram_close_to_identity = [](const Tensor& w, bool rows_ortho) {
    const int k = rows_ortho ? w.rows : w.cols;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        double dot = 0;
        if (rows_ortho) {
          for (int c = 0; c < w.cols; ++c) dot += w.at(i, c) * w.at(j, c);
        } else {
          for (int r = 0; r < w.rows; ++r) dot += w.at(r, i) * w.at(r, j);
        }
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-5));
      }
  };

  gram_close_to_identity(orthogonal_init(4, 4, 42), true);
  gram_close_to_identity(orthogonal_init(2, 8, 42), true);
  gram_close_to_identity(orthogonal_init(8, 2, 42), false);
  gram_close_to_identity(orthogonal_init(16, 16, 9), true);

  Tensor a = orthogonal_init(6, 6, 1234);
  Tensor b = orthogonal_init(6, 6, 1234);
  CHECK(a.v == b.v);
  Tensor c = orthogonal_init(6, 6, 1235);
  CHECK(a.v != c.v);
}
