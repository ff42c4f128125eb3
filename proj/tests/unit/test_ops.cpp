#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rvm/error.hpp"
#include "rvm/numeric.hpp"
#include "rvm/ops.hpp"
#include "support/gradcheck.hpp"

using namespace rvm;
using rvm::testing::random_tensor;

namespace {

Tensor vec(std::initializer_list<double> v) {
  return Tensor({v.size()}, std::vector<double>(v));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("matmul examples") {
    const Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    const Tensor m({2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(values(matmul(eye, m)) == values(m));
    const Tensor row({1, 2}, std::vector<double>{1, 2});
    const Tensor col({2, 1}, std::vector<double>{3, 4});
    CHECK(matmul(row, col).item() == 11.0);
    Rng rng(1);
    const Tensor z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
    CHECK(z.shape() == Shape{2, 4});
    for (double v : z.data()) CHECK(v == 0.0);
  }

  TEST_CASE("matmul mismatch names both shapes") {
    try {
      matmul(Tensor({2, 3}), Tensor({4, 2}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x2]") != std::string::npos);
    }
  }

  TEST_CASE("no broadcasting beyond row biases") {
    CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({3})), DimensionError);
    CHECK_THROWS_AS(add_row_bias(Tensor({2, 3}), Tensor({2})), DimensionError);
  }

  TEST_CASE("conv_vertical window sums") {
    const Tensor x = Tensor::ones({1, 4, 3});
    const Tensor w({1, 1, 2, 1}, 0.5);
    const Tensor y = conv_vertical(x, w, 2);
    CHECK(y.shape() == Shape{1, 2, 3});
    for (double v : y.data()) CHECK(v == 1.0);
  }

  TEST_CASE("conv_vertical identity kernel and column independence") {
    Rng rng(2);
    const Tensor x = random_tensor({2, 5, 7}, rng);
    Tensor delta({2, 2, 1, 1}, std::vector<double>{1, 0, 0, 1});
    CHECK(values(conv_vertical(x, delta, 1)) == values(x));

    const Tensor w = random_tensor({3, 2, 3, 1}, rng);
    const Tensor y = conv_vertical(x, w, 2);
    for (std::size_t s : {1u, 3u, 6u}) {
      const Tensor ys = conv_vertical(x, w, 2);
      (void)ys;
      // Shifting the input columns shifts the output columns.
      Tensor xs({2, 5, 7});
      auto d = xs.mutable_data();
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t h = 0; h < 5; ++h)
          for (std::size_t j = 0; j < 7; ++j) d[(c * 5 + h) * 7 + j] = x[(c * 5 + h) * 7 + (j + s) % 7];
      const Tensor out = conv_vertical(xs, w, 2);
      const std::size_t H = y.dim(1);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t j = 0; j < 7; ++j)
            CHECK(out[(c * H + h) * 7 + j] == y[(c * H + h) * 7 + (j + s) % 7]);
    }
  }

  TEST_CASE("conv_vertical rejects kernels taller than the input") {
    CHECK_THROWS_AS(conv_vertical(Tensor({1, 2, 3}), Tensor({1, 1, 3, 1}), 1), ConfigError);
    CHECK_THROWS_AS(conv_vertical(Tensor({1, 4, 3}), Tensor({1, 1, 3, 2}), 1), ConfigError);
  }

  TEST_CASE("conv1d_circular examples") {
    const Tensor x({1, 4}, std::vector<double>{1, 0, 0, 0});
    CHECK(values(conv1d_circular(x, Tensor({1, 1, 1}, 1.0))) == std::vector<double>{1, 0, 0, 0});
    CHECK(values(conv1d_circular(x, Tensor({1, 1, 3}, std::vector<double>{0, 1, 0}))) ==
          std::vector<double>{1, 0, 0, 0});
    CHECK(values(conv1d_circular(x, Tensor({1, 1, 3}, std::vector<double>{1, 0, 0}))) ==
          std::vector<double>{0, 0, 0, 1});
    CHECK_THROWS_AS(conv1d_circular(x, Tensor({1, 1, 2})), ConfigError);
  }

  TEST_CASE("conv1d_circular commutes with rotation") {
    Rng rng(3);
    const Tensor x = random_tensor({2, 9}, rng);
    const Tensor w = random_tensor({3, 2, 5}, rng);
    const Tensor y = conv1d_circular(x, w);
    for (std::size_t s = 0; s < 9; ++s) {
      Tensor xs({2, 9});
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t m = 0; m < 9; ++m) xs.mutable_data()[c * 9 + m] = x[c * 9 + (m + s) % 9];
      const Tensor ys = conv1d_circular(xs, w);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t m = 0; m < 9; ++m)
          CHECK(ys[c * 9 + m] == doctest::Approx(y[c * 9 + (m + s) % 9]).epsilon(1e-14));
    }
  }

  TEST_CASE("depthwise conv agrees with the channel-mixing form") {
    Rng rng(4);
    const Tensor x = random_tensor({7, 3}, rng);  // position-major
    const Tensor w = random_tensor({3, 3}, rng);
    const Tensor y = conv1d_circular_depthwise(x, w);
    Tensor full({3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 3; ++k) full.mutable_data()[(c * 3 + c) * 3 + k] = w[c * 3 + k];
    const Tensor ref = conv1d_circular(transpose(x), full);
    for (std::size_t m = 0; m < 7; ++m)
      for (std::size_t c = 0; c < 3; ++c) CHECK(y[m * 3 + c] == doctest::Approx(ref[c * 7 + m]));
  }

  TEST_CASE("activation values") {
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::fabs(softplus(Tensor::scalar(50.0)).item() - 50.0) < 1e-12);
    CHECK(std::isfinite(softplus(Tensor::scalar(1000.0)).item()));
    CHECK(softplus(Tensor::scalar(-1000.0)).item() >= 0.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(relu(vec({-1, 2})).data()[0] == 0.0);
  }

  TEST_CASE("silu gradient at zero is one half") {
    Tensor x = Tensor::scalar(0.0).set_requires_grad();
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = silu(x);
    }
    tape.backward(y);
    CHECK(x.grad()[0] == 0.5);
  }

  TEST_CASE("roll, flip and slicing") {
    const Tensor x({4, 1}, std::vector<double>{1, 2, 3, 4});
    CHECK(values(roll_rows(x, 2)) == std::vector<double>{3, 4, 1, 2});
    CHECK(values(flip_rows(x)) == std::vector<double>{4, 3, 2, 1});
    const Tensor m({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(values(slice_cols(m, 1, 3)) == std::vector<double>{2, 3, 5, 6});
    CHECK(values(transpose(m)) == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(values(select(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}), 1)) ==
          std::vector<double>{3, 4});
  }

  TEST_CASE("circular max pool window") {
    const Tensor x({6, 1}, std::vector<double>{1, 0, 0, 0, 0, 0});
    CHECK(values(maxpool_rows_circular(x, 5)) == std::vector<double>{1, 1, 1, 0, 1, 1});
  }

  TEST_CASE("layer norm rows have zero mean and unit variance") {
    Rng rng(5);
    const Tensor x = random_tensor({3, 8}, rng, -4, 4);
    const Tensor y = layer_norm_rows(x, Tensor::ones({8}), Tensor::zeros({8}), 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 8; ++c) mean += y[r * 8 + c] / 8;
      for (std::size_t c = 0; c < 8; ++c) var += (y[r * 8 + c] - mean) * (y[r * 8 + c] - mean) / 8;
      CHECK(std::fabs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("softmax rows sum to one and survive large logits") {
    const Tensor y = softmax_rows(Tensor({2, 2}, std::vector<double>{1000, 1000, 0, -1000}));
    CHECK(y[0] == 0.5);
    CHECK(y[2] + y[3] == doctest::Approx(1.0));
  }

  TEST_CASE("normalizations keep zeros") {
    const Tensor z = normalize_rows(Tensor::zeros({2, 3}));
    for (double v : z.data()) CHECK(v == 0.0);
    const Tensor n = l2_normalize(vec({3, 4}));
    CHECK(n[0] == doctest::Approx(0.6));
    CHECK(n[1] == doctest::Approx(0.8));
  }

  TEST_CASE("vlad aggregation is exact under position permutation") {
    Rng rng(6);
    const Tensor x = random_tensor({11, 3}, rng, -100, 100);
    const Tensor a = softmax_rows(random_tensor({11, 2}, rng));
    const Tensor c = random_tensor({2, 3}, rng);
    const Tensor base = vlad_aggregate(x, a, c);
    std::vector<std::size_t> perm(11);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 5; ++trial) {
      shuffle(std::span(perm), rng);
      Tensor xp({11, 3}), ap({11, 2});
      for (std::size_t m = 0; m < 11; ++m) {
        for (std::size_t d = 0; d < 3; ++d) xp.mutable_data()[m * 3 + d] = x[perm[m] * 3 + d];
        for (std::size_t k = 0; k < 2; ++k) ap.mutable_data()[m * 2 + k] = a[perm[m] * 2 + k];
      }
      CHECK(values(vlad_aggregate(xp, ap, c)) == values(base));
    }
  }

  TEST_CASE("exact_sum is correctly rounded and order free") {
    const std::vector<double> v{1e100, 1.0, -1e100, 1e-30};
    CHECK(exact_sum(v) == 1.0 + 1e-30);
    const std::vector<double> w{1e-30, -1e100, 1.0, 1e100};
    CHECK(exact_sum(w) == exact_sum(v));
  }
}
