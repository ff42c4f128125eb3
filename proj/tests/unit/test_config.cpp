#include "doctest.h"
#include "rvm/config.hpp"
#include "rvm/error.hpp"
#include "rvm/pipeline.hpp"
#include "support/tempdir.hpp"

using namespace rvm;

TEST_SUITE("config") {
  TEST_CASE("key value parsing") {
    const auto kv = KeyValues::parse("# comment\n\n a = 1 \nb=x\nstage=1,2,3\nstage=4,5,6\n");
    CHECK(kv.get_size("a", 0) == 1);
    CHECK(kv.get("b", "") == "x");
    CHECK(kv.all("stage").size() == 2);
    CHECK(kv.get_double("missing", 2.5) == 2.5);
    CHECK_THROWS_AS(kv.get("stage", ""), ConfigError);
    CHECK_THROWS_AS(kv.get_bool("b", false), ConfigError);
    CHECK_THROWS_AS(KeyValues::parse("novalue\n"), ConfigError);
    CHECK_THROWS_AS(KeyValues::parse("=3\n"), ConfigError);
  }

  TEST_CASE("number parsing rejects trailing junk") {
    CHECK(parse_double("1e-3", "x") == 1e-3);
    CHECK_THROWS_AS(parse_double("1.0abc", "x"), ConfigError);
    CHECK_THROWS_AS(parse_size("-1", "x"), ConfigError);
    CHECK_THROWS_AS(parse_size("", "x"), ConfigError);
    try {
      parse_size("12q", "olm_state");
      FAIL("expected a configuration error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("olm_state") != std::string::npos);
    }
  }

  TEST_CASE("presets validate") {
    CHECK_NOTHROW(PipelineConfig::kitti().validate());
    CHECK_NOTHROW(PipelineConfig::nclt().validate());
    CHECK_NOTHROW(PipelineConfig::toy().validate());
  }

  TEST_CASE("text form round trips") {
    for (auto cfg : {PipelineConfig::kitti(), PipelineConfig::nclt(), PipelineConfig::toy()}) {
      cfg.init_seed = 17;
      cfg.bypass_olm = true;
      const auto back = PipelineConfig::from_keys(KeyValues::parse(cfg.to_text()));
      CHECK(back.to_text() == cfg.to_text());
      CHECK(back.projection.fov_up == doctest::Approx(cfg.projection.fov_up).epsilon(1e-15));
    }
  }

  TEST_CASE("file round trip and missing file") {
    rvm::testing::TempDir dir;
    const auto cfg = PipelineConfig::toy();
    cfg.save(dir.path() / "p.cfg");
    CHECK(PipelineConfig::load(dir.path() / "p.cfg").to_text() == cfg.to_text());
    CHECK_THROWS_AS(PipelineConfig::load(dir.path() / "none.cfg"), IoError);
  }

  TEST_CASE("mismatched parts are configuration errors") {
    auto cfg = PipelineConfig::toy();
    cfg.olm.d_model = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PipelineConfig::toy();
    cfg.vlad.input_dim = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_keys(KeyValues::parse("spp_mode=mean\n")), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_keys(KeyValues::parse("stage=1,2\n")), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_keys(KeyValues::parse("height=48\n")), ConfigError);
  }

  TEST_CASE("height 32 selects the nclt backbone") {
    const auto cfg = PipelineConfig::from_keys(KeyValues::parse("height=32\n"));
    CHECK(cfg.backbone.height_trace(32).back() == 1);
    CHECK(cfg.backbone.stages.size() == BackboneConfig::nclt().stages.size());
  }

  TEST_CASE("preset key starts from a named configuration") {
    CHECK(PipelineConfig::from_keys(KeyValues::parse("preset=toy\n")).to_text() ==
          PipelineConfig::toy().to_text());
    CHECK(PipelineConfig::from_keys(KeyValues::parse("preset=nclt\n")).to_text() ==
          PipelineConfig::nclt().to_text());
    const auto c = PipelineConfig::from_keys(KeyValues::parse("preset=toy\nwidth=36\ninit_seed=5\n"));
    CHECK(c.projection.width == 36);
    CHECK(c.init_seed == 5);
    CHECK(c.vlad.clusters == 8);
    CHECK_THROWS_AS(PipelineConfig::from_keys(KeyValues::parse("preset=huge\n")), ConfigError);
  }
}
