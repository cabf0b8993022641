#include <doctest.h>

#include <cmath>

#include "test_helpers.hpp"
#include "vitlr/ops.hpp"
#include "vitlr/rng.hpp"
#include "vitlr/tensor.hpp"

using namespace vitlr;
using testing::max_abs_diff;
using testing::naive_conv2d;
using testing::random_tensor;

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), std::invalid_argument);
  const Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape_str() == "[2,3]");
}

TEST_CASE("conv2d identity kernel preserves the input") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 3, 3});
  w(0, 0, 1, 1) = 1.0f;
  const Tensor y = ops::conv2d(x, w, Tensor({1}), 1, 1);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d all-ones input and kernel with padding") {
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  const Tensor y = ops::conv2d(x, w, Tensor({1}), 1, 1);
  CHECK(y(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y(0, 0, 0, 2) == doctest::Approx(4.0));
}

TEST_CASE("conv2d output shape arithmetic") {
  SplitMix64 rng(7);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng);
  const Tensor y = ops::conv2d(x, w, Tensor({5}), 2, 1);
  CHECK(y.shape() == std::vector<int>({2, 5, 4, 4}));
}

TEST_CASE("conv2d rejects mismatched shapes with a named dimension") {
  SplitMix64 rng(8);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  const Tensor w = random_tensor({5, 4, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, w, Tensor({5}), 1, 1),
                       doctest::Contains("input channels"), std::invalid_argument);
  const Tensor w2 = random_tensor({5, 3, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, w2, Tensor({4}), 1, 1), doctest::Contains("bias"),
                       std::invalid_argument);
}

TEST_CASE("conv2d rejects an empty output extent") {
  SplitMix64 rng(9);
  const Tensor x = random_tensor({1, 1, 2, 2}, rng);
  const Tensor w = random_tensor({1, 1, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, w, Tensor({1}), 1, 0), doctest::Contains("empty"),
                       std::invalid_argument);
}

TEST_CASE("conv2d stride-2 floor semantics matches the oracle") {
  SplitMix64 rng(10);
  const Tensor x = random_tensor({1, 2, 7, 7}, rng);
  const Tensor w = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2}, rng);
  const Tensor y = ops::conv2d(x, w, b, 2, 0);
  CHECK(y.shape() == std::vector<int>({1, 2, 3, 3}));
  CHECK(max_abs_diff(y, naive_conv2d(x, w, b, 2, 0)) < 1e-5);
}

TEST_CASE("conv2d matches the naive quadruple-loop oracle on random shapes") {
  SplitMix64 rng(1234);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 4);
    const int cout = rng.uniform_int(1, 4), k = rng.uniform_int(0, 1) ? 1 : 3;
    const int h = rng.uniform_int(k, 8), w = rng.uniform_int(k, 8);
    const int pad = rng.uniform_int(0, 1);
    const int stride = rng.uniform_int(1, 2);
    const Tensor x = random_tensor({n, cin, h, w}, rng);
    const Tensor ww = random_tensor({cout, cin, k, k}, rng);
    const Tensor b = random_tensor({cout}, rng);
    CHECK(max_abs_diff(ops::conv2d(x, ww, b, stride, pad),
                       naive_conv2d(x, ww, b, stride, pad)) < 1e-5);
  }
}

TEST_CASE("dwconv2d with per-channel identity kernels") {
  SplitMix64 rng(11);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor w({2, 1, 3, 3});
  w(0, 0, 1, 1) = 1.0f;
  w(1, 0, 1, 1) = 1.0f;
  CHECK(max_abs_diff(ops::dwconv2d(x, w, Tensor({2}), 1, 1), x) == 0.0);
}

TEST_CASE("dwconv2d equals conv2d with a block-diagonal weight") {
  SplitMix64 rng(12);
  const int c = 3, k = 3;
  const Tensor x = random_tensor({2, c, 6, 6}, rng);
  const Tensor w = random_tensor({c, 1, k, k}, rng);
  const Tensor b = random_tensor({c}, rng);
  Tensor block({c, c, k, k});
  for (int ch = 0; ch < c; ++ch) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) block(ch, ch, u, v) = w(ch, 0, u, v);
    }
  }
  CHECK(max_abs_diff(ops::dwconv2d(x, w, b, 1, 1), ops::conv2d(x, block, b, 1, 1)) < 1e-5);
}

TEST_CASE("dwconv2d 7x7 shape preservation") {
  SplitMix64 rng(13);
  const Tensor x = random_tensor({1, 4, 6, 6}, rng);
  const Tensor w = random_tensor({4, 1, 7, 7}, rng);
  const Tensor y = ops::dwconv2d(x, w, Tensor({4}), 1, 3);
  CHECK(y.shape() == std::vector<int>({1, 4, 6, 6}));
}

TEST_CASE("batchnorm2d eval mode with identity stats is the identity") {
  SplitMix64 rng(14);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor mean({3}), var = Tensor::full({3}, 1.0f);
  const auto r = ops::batchnorm2d(x, Tensor::full({3}, 1.0f), Tensor({3}), mean, var, 1e-9f,
                                  false, 0.1f);
  CHECK(max_abs_diff(r.y, x) < 1e-5);
}

TEST_CASE("batchnorm2d train mode on constant input yields beta") {
  const Tensor x = Tensor::full({2, 2, 3, 3}, 5.0f);
  const Tensor beta({2}, {0.7f, -0.3f});
  Tensor mean({2}), var = Tensor::full({2}, 1.0f);
  const auto r = ops::batchnorm2d(x, Tensor::full({2}, 1.0f), beta, mean, var, 1e-5f, true, 0.1f);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 9; ++i) {
      CHECK(r.y(0, c, i / 3, i % 3) == doctest::Approx(beta[c]).epsilon(1e-5));
    }
  }
  // Running stats moved toward the batch statistics.
  CHECK(mean[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 5.0f));
}

TEST_CASE("batchnorm2d train mode normalizes hand-computed values") {
  const Tensor x({1, 1, 1, 4}, {1, 2, 3, 4});
  Tensor mean({1}), var = Tensor::full({1}, 1.0f);
  const auto r = ops::batchnorm2d(x, Tensor::full({1}, 1.0f), Tensor({1}), mean, var, 1e-12f,
                                  true, 0.1f);
  CHECK(r.y(0, 0, 0, 0) == doctest::Approx(-1.3416).epsilon(1e-3));
  CHECK(r.y(0, 0, 0, 1) == doctest::Approx(-0.4472).epsilon(1e-3));
  CHECK(r.y(0, 0, 0, 2) == doctest::Approx(0.4472).epsilon(1e-3));
  CHECK(r.y(0, 0, 0, 3) == doctest::Approx(1.3416).epsilon(1e-3));
}

TEST_CASE("batchnorm2d rejects channel mismatch") {
  const Tensor x({1, 3, 2, 2});
  Tensor mean({3}), var({3});
  CHECK_THROWS_AS(
      ops::batchnorm2d(x, Tensor({2}), Tensor({3}), mean, var, 1e-5f, true, 0.1f),
      std::invalid_argument);
}

TEST_CASE("layernorm constant-across-channels input maps to zero") {
  Tensor x({1, 3, 2, 2});
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) x(0, c, i / 2, i % 2) = 2.5f;
  }
  const Tensor y = ops::layernorm(x, Tensor::full({3}, 1.0f), Tensor({3}), 1e-5f);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("layernorm with gamma zero yields beta everywhere") {
  SplitMix64 rng(15);
  const Tensor x = random_tensor({2, 4, 3, 3}, rng);
  const Tensor beta({4}, {1, 2, 3, 4});
  const Tensor y = ops::layernorm(x, Tensor({4}), beta, 1e-5f);
  for (int c = 0; c < 4; ++c) CHECK(y(0, c, 1, 1) == doctest::Approx(beta[c]));
}

TEST_CASE("layernorm two-channel hand case") {
  const Tensor x({1, 2, 1, 1}, {1.0f, 3.0f});
  const Tensor y = ops::layernorm(x, Tensor::full({2}, 1.0f), Tensor({2}), 1e-12f);
  CHECK(y(0, 0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("activation examples") {
  const Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  const Tensor r = ops::relu(x);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 0.0f);
  CHECK(r[2] == 2.0f);
  CHECK(ops::sigmoid(Tensor::scalar(0.0f))[0] == doctest::Approx(0.5));
  const Tensor s = ops::softmax_channels(Tensor({1, 2}, {0.0f, 0.0f}));
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and activations stay finite") {
  SplitMix64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({3, 5}, rng, -80.0f, 80.0f);
    const Tensor y = ops::softmax_channels(x);
    CHECK(y.all_finite());
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 5; ++c) sum += y(r, c);
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK(ops::sigmoid(x).all_finite());
    CHECK(ops::relu(x).all_finite());
  }
}

TEST_CASE("dense identity and pooling mean") {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0f;
  CHECK(max_abs_diff(ops::dense(x, eye, Tensor({3})), x) == 0.0);

  const Tensor p({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(ops::adaptive_avg_pool2d(p, 1, 1)(0, 0, 0, 0) == doctest::Approx(2.5));
  CHECK_THROWS_WITH_AS(ops::adaptive_avg_pool2d(p, 3, 1), doctest::Contains("divide"),
                       std::invalid_argument);
}

TEST_CASE("reshape round-trips bit-exactly and rejects count mismatch") {
  SplitMix64 rng(17);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor y = ops::reshape(ops::reshape(x, {2, 12}), {2, 3, 4});
  CHECK(max_abs_diff(x, y) == 0.0);
  CHECK_THROWS_WITH_AS(ops::reshape(x, {5, 5}), doctest::Contains("element count"),
                       std::invalid_argument);
  const Tensor f = ops::flatten(x);
  CHECK(f.shape() == std::vector<int>({2, 12}));
}

TEST_CASE("concat_channels stacks and splits") {
  SplitMix64 rng(18);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2, 3, 3, 3}, rng);
  const Tensor y = ops::concat_channels({a, b});
  CHECK(y.shape() == std::vector<int>({2, 5, 3, 3}));
  CHECK(y(1, 0, 2, 2) == a(1, 0, 2, 2));
  CHECK(y(1, 2, 0, 1) == b(1, 0, 0, 1));
  const auto parts = ops::concat_channels_backward(y, {2, 3});
  CHECK(max_abs_diff(parts[0], a) == 0.0);
  CHECK(max_abs_diff(parts[1], b) == 0.0);
}

TEST_CASE("upsample_nearest repeats pixels") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = ops::upsample_nearest(x, 2, 3);
  CHECK(y.shape() == std::vector<int>({1, 1, 4, 6}));
  CHECK(y(0, 0, 0, 0) == 1.0f);
  CHECK(y(0, 0, 0, 5) == 2.0f);
  CHECK(y(0, 0, 3, 0) == 3.0f);
}

TEST_CASE("grid_to_rows lays out one row per location") {
  const Tensor x({1, 2, 1, 2}, {1, 2, 3, 4});  // ch0: [1 2], ch1: [3 4]
  const Tensor y = ops::grid_to_rows(x);
  CHECK(y.shape() == std::vector<int>({2, 2}));
  CHECK(y(0, 0) == 1.0f);
  CHECK(y(0, 1) == 3.0f);
  CHECK(y(1, 0) == 2.0f);
  CHECK(y(1, 1) == 4.0f);
}
