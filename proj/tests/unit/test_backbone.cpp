#include <cmath>

#include "doctest.h"
#include "rvm/backbone.hpp"
#include "rvm/error.hpp"
#include "rvm/ops.hpp"
#include "support/gradcheck.hpp"

using namespace rvm;
using rvm::testing::random_tensor;

namespace {

BackboneConfig small_plan(SppMode mode = SppMode::concat) {
  BackboneConfig c;
  c.stages = {{4, 3, 2}, {6, 3, 2}, {8, 3, 1}};  // 16 -> 7 -> 3 -> 1
  c.spp.mode = mode;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("default plans reach height one with 256 channels") {
    const auto k = BackboneConfig::kitti();
    CHECK(k.height_trace(64) == std::vector<std::size_t>{64, 31, 15, 7, 3, 1, 1});
    CHECK(k.channels() == 256);
    CHECK_NOTHROW(k.validate(64));
    const auto n = BackboneConfig::nclt();
    CHECK(n.height_trace(32) == std::vector<std::size_t>{32, 15, 7, 3, 1, 1});
    CHECK_NOTHROW(n.validate(32));
  }

  TEST_CASE("a plan that misses height one reports the trace") {
    try {
      BackboneConfig::kitti().validate(32);
      FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("32 15 7 3 1") != std::string::npos);
    }
    BackboneConfig c;
    CHECK_THROWS_AS(c.validate(8), ConfigError);
    c.stages = {{4, 3, 2}};
    c.spp.kernel = 4;
    CHECK_THROWS_AS(c.validate(3), ConfigError);
  }

  TEST_CASE("kitti input gives a 900x256 sequence") {
    Rng rng(1);
    const auto cfg = BackboneConfig::kitti();
    const auto w = BackboneWeights::init(cfg, rng);
    const Tensor img = random_tensor({1, 64, 900}, rng, 0.0, 1.0);
    const auto seq = backbone_forward(img, cfg, w);
    CHECK(seq.batch() == 1);
    CHECK(seq.length() == 900);
    CHECK(seq.channels() == 256);
  }

  TEST_CASE("all-zero image with zero biases gives zeros") {
    Rng rng(2);
    const auto cfg = small_plan();
    const auto w = BackboneWeights::init(cfg, rng);
    const auto seq = backbone_forward(Tensor({1, 16, 10}), cfg, w);
    for (double v : seq.values.data()) CHECK(v == 0.0);
  }

  TEST_CASE("column shifts commute with the backbone") {
    Rng rng(3);
    for (auto mode : {SppMode::concat, SppMode::add}) {
      const auto cfg = small_plan(mode);
      auto w = BackboneWeights::init(cfg, rng);
      for (auto& b : w.conv_bias)
        for (auto& v : b.mutable_data()) v = normal(rng);
      const std::size_t width = 24;
      const Tensor img = random_tensor({1, 16, width}, rng, 0.0, 1.0);
      const Tensor base = backbone_forward(img, cfg, w).values;  // [1×M×D]
      for (std::size_t s : {std::size_t{1}, width / 4, width / 2, std::size_t{17}}) {
        const Tensor shifted = backbone_forward(shift_columns(img, s), cfg, w).values;
        Tensor expect({1, width, cfg.channels()});
        const std::size_t d = cfg.channels();
        for (std::size_t m = 0; m < width; ++m)
          for (std::size_t c = 0; c < d; ++c)
            expect.mutable_data()[m * d + c] = base[((m + s) % width) * d + c];
        CHECK(max_abs_diff(shifted, expect) < 1e-12);
      }
    }
  }

  TEST_CASE("batched input equals per-item calls") {
    Rng rng(4);
    const auto cfg = small_plan();
    const auto w = BackboneWeights::init(cfg, rng);
    const Tensor a = random_tensor({1, 16, 8}, rng), b = random_tensor({1, 16, 8}, rng);
    const auto batch = backbone_forward(stack(std::vector<Tensor>{a, b}), cfg, w);
    const auto sb = backbone_forward(b, cfg, w);
    CHECK(max_abs_diff(batch.item(1), sb.item(0)) == 0.0);
  }

  TEST_CASE("spp single pooling example") {
    SppConfig c;
    c.depth = 1;
    c.mode = SppMode::add;
    const Tensor x({6, 1}, std::vector<double>{1, 0, 0, 0, 0, 0});
    const Tensor y = spp_forward(x, c);
    // add mode: x + p1
    const std::vector<double> p1{1, 1, 1, 0, 1, 1};
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == x[i] + p1[i]);
  }

  TEST_CASE("spp add mode on a constant is four times the constant") {
    SppConfig c;
    c.mode = SppMode::add;
    const Tensor y = spp_forward(Tensor({7, 2}, 1.25), c);
    for (double v : y.data()) CHECK(v == 5.0);
  }

  TEST_CASE("spp concat mode fuses back to the input width") {
    Rng rng(5);
    SppConfig c;
    const Tensor x = random_tensor({9, 3}, rng);
    const Tensor w = random_tensor({12, 3}, rng), b = random_tensor({3}, rng);
    const Tensor y = spp_forward(x, c, w, b);
    CHECK(y.shape() == Shape{9, 3});
    CHECK_THROWS_AS(spp_forward(x, c), ContractError);
  }

  TEST_CASE("max pooling never lowers a channel maximum") {
    Rng rng(6);
    const Tensor x = random_tensor({15, 4}, rng);
    const Tensor p = maxpool_rows_circular(x, 5);
    for (std::size_t c = 0; c < 4; ++c) {
      double mx = -1e9, mp = -1e9;
      for (std::size_t m = 0; m < 15; ++m) {
        mx = std::max(mx, x[m * 4 + c]);
        mp = std::max(mp, p[m * 4 + c]);
      }
      CHECK(mp >= mx);
    }
  }

  TEST_CASE("output length equals the input width") {
    Rng rng(7);
    const auto cfg = small_plan();
    const auto w = BackboneWeights::init(cfg, rng);
    for (std::size_t width : {2u, 5u, 33u})
      CHECK(backbone_forward(Tensor({1, 16, width}), cfg, w).length() == width);
  }

  TEST_CASE("shift_columns moves column j+s to j") {
    const Tensor img({1, 1, 4}, std::vector<double>{0, 1, 2, 3});
    const Tensor s = shift_columns(img, 1);
    CHECK(s[0] == 1);
    CHECK(s[3] == 0);
    CHECK_THROWS_AS(shift_columns(img, 4), ContractError);
  }

  TEST_CASE("parameter names") {
    Rng rng(8);
    ParameterList p;
    BackboneWeights::init(small_plan(), rng).append_parameters(p);
    REQUIRE(p.size() == 8);
    CHECK(p[0].name == "backbone.stage0.weight");
    CHECK(p[7].name == "backbone.spp.bias");
  }
}
