#include <cmath>
#include <numbers>

#include "doctest.h"
#include "rvm/error.hpp"
#include "rvm/random.hpp"
#include "rvm/rangeview.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace rvm;

namespace {

ProjectionConfig symmetric_900x64() {
  ProjectionConfig c;
  c.width = 900;
  c.height = 64;
  c.fov_up = c.fov_down = 12.5 * std::numbers::pi / 180.0;
  return c;
}

PointCloud planar_grid() {
  PointCloud pc;
  for (int i = -20; i <= 20; ++i)
    for (int k = -6; k <= 2; ++k) pc.points.push_back({12.0, 0.5 * i, 0.4 * k});
  return pc;
}

}  // namespace

TEST_SUITE("rangeview") {
  TEST_CASE("projection examples") {
    const auto cfg = symmetric_900x64();
    const auto a = project_point({10, 0, 0}, cfg);
    REQUIRE(a);
    CHECK(a->u == 450);
    CHECK(a->v == 32);
    CHECK(a->range == 10.0);
    CHECK(project_point({0, 10, 0}, cfg)->u == 225);
    const auto c = project_point({3, 4, 0}, cfg);
    CHECK(c->range == 5.0);
    CHECK(c->u == 317);
  }

  TEST_CASE("projection rejects empty, far and out-of-view points") {
    const auto cfg = symmetric_900x64();
    CHECK_FALSE(project_point({0, 0, 0}, cfg));
    CHECK_FALSE(project_point({60, 0, 0}, cfg));
    CHECK_FALSE(project_point({1, 0, 5}, cfg));
    CHECK_FALSE(project_point({1, 0, -5}, cfg));
  }

  TEST_CASE("azimuth of minus pi wraps to column 0") {
    const auto cfg = symmetric_900x64();
    CHECK(project_point({-10, -0.0, 0}, cfg)->u == 0);
    CHECK(project_point({-10, 0.0, 0}, cfg)->u == 0);
  }

  TEST_CASE("every projected index is in bounds") {
    Rng rng(1);
    auto cfg = symmetric_900x64();
    cfg.fov_up = 3.0 * std::numbers::pi / 180.0;
    cfg.fov_down = 25.0 * std::numbers::pi / 180.0;
    for (int i = 0; i < 100000; ++i) {
      const Vec3 p{uniform(rng, -60, 60), uniform(rng, -60, 60), uniform(rng, -30, 30)};
      if (const auto px = project_point(p, cfg)) {
        CHECK(px->u < cfg.width);
        CHECK(px->v < cfg.height);
      }
    }
  }

  TEST_CASE("range image collisions keep the nearest return") {
    const auto cfg = symmetric_900x64();
    CHECK(build_range_image({}, cfg).valid_count() == 0);
    PointCloud pc;
    pc.points = {{9, 0, 0}, {5, 0, 0}};
    const auto img = build_range_image(pc, cfg);
    CHECK(img.at(32, 450) == 5.0);
    CHECK(img.valid_count() == 1);
    CHECK(img.at(0, 0) == kNoReturn);
  }

  TEST_CASE("yaw rotation by whole columns shifts the image") {
    const auto cfg = symmetric_900x64();
    const double w = static_cast<double>(cfg.width);
    Rng rng(2);
    PointCloud pc;
    // Points at pixel-center azimuths and elevations, away from pixel borders.
    for (int i = 0; i < 3000; ++i) {
      const std::size_t u = uniform_index(rng, cfg.width), v = uniform_index(rng, cfg.height);
      const double az = std::numbers::pi * (1.0 - 2.0 * (double(u) + 0.5) / w);
      const double el = cfg.fov_up - (double(v) + 0.5) / double(cfg.height) * cfg.fov();
      const double r = uniform(rng, 2.0, 45.0);
      pc.points.push_back({r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az),
                           r * std::sin(el)});
    }
    const auto base = build_range_image(pc, cfg);
    for (std::size_t k : {1u, 17u, 450u}) {
      const double yaw = 2.0 * std::numbers::pi * double(k) / w;
      const Pose rot = Pose::from_yaw(yaw, {0, 0, 0});
      PointCloud rotated;
      for (const auto& p : pc.points) rotated.points.push_back(rot.apply(p));
      const auto img = build_range_image(rotated, cfg);
      std::size_t mismatches = 0;
      for (std::size_t v = 0; v < cfg.height; ++v)
        for (std::size_t u = 0; u < cfg.width; ++u)
          {
            const double a = img.at(v, u), b = base.at(v, (u + k) % cfg.width);
            // Rotation perturbs ranges by rounding only.
            mismatches += (a == kNoReturn) != (b == kNoReturn) || std::fabs(a - b) > 1e-12 * std::fabs(b);
          }
      CHECK(mismatches == 0);
    }
  }

  TEST_CASE("overlap of a scan with itself is one") {
    const auto cfg = symmetric_900x64();
    const auto pc = planar_grid();
    const auto img = build_range_image(pc, cfg);
    const Pose pose = Pose::from_yaw(0.3, {1, 2, 0});
    CHECK(compute_overlap(img, pose, pc, pose) == 1.0);
    CHECK(compute_overlap(img, pose, PointCloud{}, pose) == 0.0);
    CHECK(compute_overlap(build_range_image({}, cfg), pose, pc, pose) == 0.0);
  }

  TEST_CASE("overlap of a translated planar grid matches the per-pixel oracle") {
    const auto cfg = symmetric_900x64();
    const auto pc = planar_grid();
    const auto img = build_range_image(pc, cfg);
    const Pose pa = Pose::from_yaw(0.0, {0, 0, 0});
    for (const Pose& pb : {Pose::from_yaw(0.0, {1, 0, 0}), Pose::from_yaw(0.0, {0, 1, 0}),
                           Pose::from_yaw(0.05, {1, 0, 0})}) {
      const double got = compute_overlap(img, pa, pc, pb, 0.05);
      CHECK(got == oracle::overlap(img, pa, pc, pb, 0.05));
    }
  }

  TEST_CASE("invalid pose is a contract error") {
    const auto cfg = symmetric_900x64();
    Pose bad;
    bad.rotation[0] = 2.0;
    const auto img = build_range_image(planar_grid(), cfg);
    CHECK_THROWS_AS(compute_overlap(img, bad, planar_grid(), Pose{}), ContractError);
    CHECK_THROWS_AS(bad.validate(), ContractError);
    Pose reflect;
    reflect.rotation = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK_THROWS_AS(reflect.validate(), ContractError);
  }

  TEST_CASE("projection config validation") {
    ProjectionConfig c = symmetric_900x64();
    c.fov_up = c.fov_down = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = symmetric_900x64();
    c.width = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("tuples split by the threshold") {
    const std::vector<OverlapLabel> labels{{0, 1, 0.9}, {0, 2, 0.1}};
    const auto t = build_tuples(labels, 0.3, 6, 6, 0);
    // Scan 0 has one positive and one negative; scans 1 and 2 lack one kind.
    REQUIRE(t.size() == 1);
    CHECK(t[0].query == 0);
    CHECK(t[0].positives == std::vector<std::size_t>{1});
    CHECK(t[0].negatives == std::vector<std::size_t>{2});
    CHECK(build_tuples({{0, 1, 0.2}, {0, 2, 0.3}}, 0.3, 6, 6, 0).empty());
  }

  TEST_CASE("labels serve both queries of a pair") {
    const std::vector<OverlapLabel> labels{{0, 1, 0.9}, {1, 2, 0.1}, {0, 2, 0.05}};
    const auto t = build_tuples(labels, 0.3, 6, 6, 0);
    REQUIRE(t.size() == 2);
    CHECK(t[1].query == 1);
    CHECK(t[1].positives == std::vector<std::size_t>{0});
    CHECK(t[1].negatives == std::vector<std::size_t>{2});
  }

  TEST_CASE("tuple sampling caps the sets and is seeded") {
    std::vector<OverlapLabel> labels;
    for (std::size_t j = 1; j <= 30; ++j) labels.push_back({0, j, j <= 10 ? 0.8 : 0.1});
    const auto a = build_tuples(labels, 0.3, 6, 6, 42);
    const auto b = build_tuples(labels, 0.3, 6, 6, 42);
    REQUIRE(a.size() == 1);
    CHECK(a[0].positives.size() == 6);
    CHECK(a[0].negatives.size() == 6);
    CHECK(a[0].positives == b[0].positives);
    CHECK(a[0].negatives == b[0].negatives);
    CHECK_THROWS_AS(build_tuples(labels, 1.5, 6, 6, 0), ContractError);
  }

  TEST_CASE("network input scales by max range and zeroes empty pixels") {
    auto cfg = symmetric_900x64();
    PointCloud pc;
    pc.points = {{25, 0, 0}};
    const Tensor t = to_network_input(build_range_image(pc, cfg));
    CHECK(t.shape() == Shape{1, 64, 900});
    CHECK(t[32 * 900 + 450] == 0.5);
    CHECK(t[0] == 0.0);
  }

  TEST_CASE("file formats round trip") {
    rvm::testing::TempDir dir;
    PointCloud pc;
    pc.points = {{1.5, -2.25, 0.125}, {10, 20, -3}};
    pc.intensity = {0.5f, 1.0f};
    write_scan(dir.path() / "s.bin", pc);
    const auto back = read_scan(dir.path() / "s.bin");
    CHECK(back.points == pc.points);
    CHECK(back.intensity == pc.intensity);

    const std::vector<Pose> poses{Pose::from_yaw(0.7, {1, 2, 3}), Pose{}};
    write_poses(dir.path() / "p.txt", poses);
    const auto pb = read_poses(dir.path() / "p.txt");
    REQUIRE(pb.size() == 2);
    CHECK(pb[0].rotation == poses[0].rotation);
    CHECK(pb[0].translation == poses[0].translation);

    const auto cfg = symmetric_900x64();
    const auto img = build_range_image(planar_grid(), cfg);
    write_range_image(dir.path() / "r.omrv", img);
    const auto ib = read_range_image(dir.path() / "r.omrv", &cfg);
    CHECK(ib.config.width == 900);
    CHECK(ib.valid_count() == img.valid_count());
    CHECK(ib.at(0, 0) == kNoReturn);

    const std::vector<OverlapLabel> labels{{0, 1, 0.25}, {3, 2, 1.0}};
    write_labels(dir.path() / "l.txt", labels);
    const auto lb = read_labels(dir.path() / "l.txt");
    REQUIRE(lb.size() == 2);
    CHECK(lb[0].overlap == 0.25);
    CHECK(lb[1].query == 3);
  }

  TEST_CASE("malformed files are io errors") {
    rvm::testing::TempDir dir;
    {
      std::ofstream(dir.path() / "odd.bin") << "12345";
      std::ofstream(dir.path() / "p.txt") << "1 2 3\n";
      std::ofstream(dir.path() / "r.omrv") << "XXXX";
    }
    CHECK_THROWS_AS(read_scan(dir.path() / "odd.bin"), IoError);
    CHECK_THROWS_AS(read_poses(dir.path() / "p.txt"), IoError);
    CHECK_THROWS_AS(read_range_image(dir.path() / "r.omrv"), IoError);
    CHECK_THROWS_AS(read_scan(dir.path() / "missing.bin"), IoError);
  }
}
