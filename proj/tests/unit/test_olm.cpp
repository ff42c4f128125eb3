#include <cmath>

#include "doctest.h"
#include "rvm/error.hpp"
#include "rvm/olm.hpp"
#include "rvm/ops.hpp"
#include "support/gradcheck.hpp"

using namespace rvm;
using rvm::testing::random_tensor;

namespace {

OlmConfig small_config(bool train = false) {
  OlmConfig c;
  c.d_model = 4;
  c.expand = 6;
  c.state = 3;
  c.train_mode = train;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void zero_branch(OlmBlockWeights& w, Direction d) {
  for (auto& v : w.branch(d).conv_weight.mutable_data()) v = 0.0;
  for (auto& v : w.branch(d).conv_bias.mutable_data()) v = 0.0;
}

void randomize_biases(OlmBlockWeights& w, Rng& rng) {
  for (Tensor* t : {&w.norm_gain, &w.norm_bias, &w.lin_x_bias, &w.lin_z_bias, &w.lin_t_bias})
    for (auto& v : t->mutable_data()) v = normal(rng);
  for (auto& br : w.branches)
    for (auto& v : br.conv_bias.mutable_data()) v = 0.3 * normal(rng);
}

}  // namespace

TEST_SUITE("olm") {
  TEST_CASE("shift and flip examples") {
    const Tensor x({4, 1}, std::vector<double>{1, 2, 3, 4});
    CHECK(values(shift(x, 2)) == std::vector<double>{3, 4, 1, 2});
    CHECK(values(shift(x, 0)) == values(x));
    CHECK(values(shift(shift(x, 1), 3)) == values(x));
    CHECK_THROWS_AS(shift(x, 4), ContractError);
    const Tensor y({3, 1}, std::vector<double>{1, 2, 3});
    CHECK(values(flip(y)) == std::vector<double>{3, 2, 1});
    CHECK(values(flip(flip(x))) == values(x));
  }

  TEST_CASE("flip of a shift is a shift of the flip") {
    Rng rng(1);
    for (std::size_t m = 1; m <= 16; ++m) {
      const Tensor x = random_tensor({m, 2}, rng);
      for (std::size_t a = 0; a < m; ++a)
        CHECK(values(flip(shift(x, a))) == values(shift(flip(x), (m - a) % m)));
    }
  }

  TEST_CASE("zero projections make the block a pure residual") {
    Rng rng(2);
    const auto cfg = small_config(true);
    auto w = OlmWeights::init(cfg, rng);
    w.zero_projections();
    const TokenSequence x{random_tensor({2, 9, 4}, rng)};
    const auto out = olm_forward(x, cfg, w.blocks[0], rng);
    CHECK(values(out.values) == values(x.values));
  }

  TEST_CASE("zero-weight stack of two blocks only normalizes") {
    Rng rng(3);
    auto cfg = small_config();
    cfg.blocks = 2;
    auto w = OlmWeights::init(cfg, rng);
    w.zero_projections();
    const Tensor x = random_tensor({1, 7, 4}, rng);
    const auto out = olm_stack(TokenSequence{x}, cfg, w, rng);
    const Tensor ref = layer_norm_rows(select(x, 0), w.final_gain, w.final_bias);
    CHECK(values(out.item(0)) == values(ref));
  }

  TEST_CASE("zero-weight block has identity jacobian") {
    Rng rng(4);
    const auto cfg = small_config();
    auto w = OlmWeights::init(cfg, rng);
    w.zero_projections();
    const Tensor x = random_tensor({1, 8, 4}, rng).set_requires_grad();
    const Tensor probe = random_tensor({1, 8, 4}, rng);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(mul(olm_forward(TokenSequence{x}, cfg, w.blocks[0], rng).values, probe));
    }
    tape.backward(loss);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::fabs(x.grad()[i] - probe[i]) < 1e-12);
    CHECK(rvm::testing::gradcheck(
              [&](const std::vector<Tensor>& v) {
                Rng r(0);
                return olm_forward(TokenSequence{v[0]}, cfg, w.blocks[0], r).values;
              },
              {x.clone()}, rng) < 1e-4);
  }

  TEST_CASE("closed gate returns the input") {
    Rng rng(5);
    const auto cfg = small_config();
    auto w = OlmWeights::init(cfg, rng);
    for (auto& v : w.blocks[0].lin_z_bias.mutable_data()) v = -1000.0;
    const TokenSequence x{random_tensor({1, 6, 4}, rng)};
    const auto out = olm_forward(x, cfg, w.blocks[0], rng);
    CHECK(max_abs_diff(out.values, x.values) < 1e-6);
  }

  TEST_CASE("eval mode is deterministic and leaves the rng alone") {
    Rng rng(6);
    const auto cfg = small_config(false);
    const auto w = OlmWeights::init(cfg, rng);
    const TokenSequence x{random_tensor({1, 10, 4}, rng)};
    Rng r1(1), r2(999);
    const auto a = olm_forward(x, cfg, w.blocks[0], r1);
    const auto b = olm_forward(x, cfg, w.blocks[0], r2);
    CHECK(values(a.values) == values(b.values));
    CHECK(r1() == Rng(1)());
  }

  TEST_CASE("train mode depends on the seed only through the shifted branches") {
    Rng rng(7);
    const auto cfg = small_config(true);
    auto w = OlmWeights::init(cfg, rng);
    randomize_biases(w.blocks[0], rng);
    const TokenSequence x{random_tensor({1, 12, 4}, rng)};
    auto run = [&](const OlmBlockWeights& bw, std::uint64_t seed) {
      Rng r(seed);
      return values(olm_forward(x, cfg, bw, r).values);
    };
    CHECK(run(w.blocks[0], 3) == run(w.blocks[0], 3));

    OlmBlockWeights only_shifted = w.blocks[0];
    auto clone_branches = [](OlmBlockWeights& b) {
      for (auto& br : b.branches) {
        br.conv_weight = br.conv_weight.clone();
        br.conv_bias = br.conv_bias.clone();
      }
    };
    clone_branches(only_shifted);
    zero_branch(only_shifted, Direction::forward);
    zero_branch(only_shifted, Direction::backward);
    CHECK(run(only_shifted, 3) != run(only_shifted, 4));

    OlmBlockWeights no_shifted = w.blocks[0];
    clone_branches(no_shifted);
    zero_branch(no_shifted, Direction::forward_shifted);
    zero_branch(no_shifted, Direction::backward_shifted);
    CHECK(run(no_shifted, 3) == run(no_shifted, 4));
  }

  TEST_CASE("one draw per block per forward") {
    Rng rng(8);
    auto cfg = small_config(true);
    cfg.blocks = 3;
    const auto w = OlmWeights::init(cfg, rng);
    Rng used(5);
    (void)olm_stack(TokenSequence{random_tensor({2, 5, 4}, rng)}, cfg, w, used);
    Rng expect(5);
    for (int i = 0; i < 3; ++i) (void)expect();
    CHECK(used() == expect());
  }

  TEST_CASE("each direction matches a hand-wired single branch") {
    Rng rng(9);
    const auto cfg = small_config(true);
    const std::size_t m = 11;
    const auto w = OlmWeights::init(cfg, rng);
    OlmBlockWeights bw = w.blocks[0];
    randomize_biases(bw, rng);
    const Tensor prev = random_tensor({m, 4}, rng);
    for (auto d : kDirections) {
      CAPTURE(direction_name(d));
      OlmBlockWeights iso = bw;
      for (auto& br : iso.branches) {
        br.conv_weight = br.conv_weight.clone();
        br.conv_bias = br.conv_bias.clone();
      }
      for (auto other : kDirections)
        if (other != d) zero_branch(iso, other);

      // Reference assembled from primitives.
      const std::size_t a = 4;
      const Tensor normed = layer_norm_rows(prev, iso.norm_gain, iso.norm_bias);
      const Tensor x = linear(normed, iso.lin_x_weight, iso.lin_x_bias);
      const Tensor z = linear(normed, iso.lin_z_weight, iso.lin_z_bias);
      Tensor seq = x;
      if (is_shifted(d)) seq = roll_rows(seq, a);
      if (is_backward(d)) seq = flip_rows(seq);
      const auto& br = iso.branch(d);
      Tensor y = ssm::selective_ssm(
          silu(conv1d_circular_depthwise(seq, br.conv_weight, br.conv_bias)), br.ssm);
      if (is_backward(d)) y = flip_rows(y);
      if (is_shifted(d)) y = roll_rows(y, m - a);
      const Tensor ref = add(linear(mul(y, silu(z)), iso.lin_t_weight, iso.lin_t_bias), prev);

      // Full block with the matching offset: train mode draws a = 4 from this seed.
      std::uint64_t seed = 0;
      for (;; ++seed) {
        Rng probe(seed);
        if (uniform_index(probe, m) == a) break;
      }
      Rng r(seed);
      const auto full = olm_forward(TokenSequence{reshape(prev, {1, m, 4})}, cfg, iso, r);
      CHECK(max_abs_diff(full.item(0), ref) < 1e-12);
      CHECK(max_abs_diff(olm_single_branch(prev, cfg, bw, d, a), olm_single_branch(prev, cfg, iso, d, a)) == 0.0);
    }
  }

  TEST_CASE("output shape holds for several depths") {
    Rng rng(10);
    for (std::size_t l : {1u, 2u, 3u}) {
      auto cfg = small_config(true);
      cfg.blocks = l;
      const auto w = OlmWeights::init(cfg, rng);
      const auto out = olm_stack(TokenSequence{random_tensor({2, 6, 4}, rng)}, cfg, w, rng);
      CHECK(out.values.shape() == Shape{2, 6, 4});
    }
  }

  TEST_CASE("shape errors name the failing line") {
    Rng rng(11);
    const auto cfg = small_config();
    const auto w = OlmWeights::init(cfg, rng);
    try {
      (void)olm_forward(TokenSequence{Tensor({1, 5, 3})}, cfg, w.blocks[0], rng);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("norm line") != std::string::npos);
    }
    OlmBlockWeights bad = w.blocks[0];
    bad.lin_t_weight = Tensor({6, 3});
    try {
      (void)olm_forward(TokenSequence{Tensor({1, 5, 4})}, cfg, bad, rng);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("output projection line") != std::string::npos);
    }
  }

  TEST_CASE("config validation") {
    OlmConfig c = small_config();
    c.expand = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.blocks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.conv_kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(OlmConfig{}.resolved_delta_rank() == 16);
  }

  TEST_CASE("checkpoint names") {
    Rng rng(12);
    ParameterList p;
    OlmWeights::init(small_config(), rng).append_parameters(p);
    CHECK(p.front().name == "olm.L0.norm.gain");
    bool found = false;
    for (const auto& q : p) found = found || q.name == "olm.L0.backward_shifted.proj_Δ.weight";
    CHECK(found);
    CHECK(p.back().name == "olm.norm_f.bias");
  }
}
