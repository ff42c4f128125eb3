#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rvm/config.hpp"
#include "rvm/random.hpp"
#include "rvm/rangeview.hpp"

namespace rvm::synth {

/// Oriented box standing on z = zmin.
struct Box {
  double cx = 0, cy = 0, yaw = 0;
  double half_x = 1, half_y = 1;
  double zmin = -2, zmax = 2;
};

/// Vertical cylinder.
struct Cylinder {
  double cx = 0, cy = 0, radius = 0.5;
  double zmin = -2, zmax = 2;
};

struct Scene {
  Vec3 center{0, 0, 0};
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;

  /// Nearest positive hit distance along a unit ray, if any.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
};

struct WorldSpec {
  std::uint64_t seed = 7;
  std::size_t places = 20;
  std::size_t revisits = 3;  // visits per place
  double yaw_jitter = 3.14159265358979323846;
  double translation_jitter = 0.5;
  std::size_t obstacles = 4;           // unique to each place
  std::size_t shared_obstacles = 10;   // common layout, displaced per place
  double shared_displacement = 1.0;    // max xy offset of a shared obstacle
  double range_noise = 0.02;           // uniform ± meters per return
  double min_dist = 6.0;
  double max_dist = 22.0;
  double box_half_min = 0.5, box_half_max = 2.5;
  double cylinder_radius_min = 0.3, cylinder_radius_max = 1.2;
  double obstacle_base = -2.0;
  double height_min = 0.5, height_max = 6.0;
  double place_spacing = 250.0;
  ProjectionConfig sensor = default_sensor();

  /// Throws ContractError on a degenerate spec (fewer than two places, no
  /// obstacles at all, negative jitter).
  void validate() const;
  static WorldSpec from_keys(const KeyValues& kv);
  static WorldSpec load(const std::filesystem::path& path);
  /// 16 beams over ±12.5°, 180 azimuth steps, 50 m.
  static ProjectionConfig default_sensor();
};

struct Visit {
  std::size_t place = 0;
  Pose pose;
};

struct World {
  std::vector<Scene> scenes;
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
  std::vector<std::size_t> place_ids;
};

std::vector<Scene> generate_scenes(const WorldSpec& spec);

/// Pose at the place center with uniform xy jitter and uniform yaw jitter,
/// plus `yaw_offset`.
Pose jittered_pose(const WorldSpec& spec, const Scene& scene, Rng& rng, double yaw_offset = 0.0);

/// Visits ordered round by round: every place once, then every place again.
std::vector<Visit> default_visits(const WorldSpec& spec, const std::vector<Scene>& scenes);

/// Fresh visits drawn from Rng(seed): one round per entry of
/// `round_yaw_offsets`, every place once per round, each yaw shifted by the
/// round's offset.
std::vector<Visit> extra_visits(const WorldSpec& spec, const std::vector<Scene>& scenes,
                                const std::vector<double>& round_yaw_offsets, std::uint64_t seed);

/// Casts one ray per pixel center of the sensor; points are in sensor frame.
/// With `noise > 0`, each hit distance is perturbed uniformly within ±noise.
PointCloud render_scan(const Scene& scene, const Pose& pose, const ProjectionConfig& sensor,
                       double noise = 0.0, std::uint64_t noise_seed = 0);

/// Scan i uses noise seed spec.seed · 1000003 + noise_offset + i.
World render_world(const WorldSpec& spec, std::vector<Scene> scenes,
                   const std::vector<Visit>& visits, std::uint64_t noise_offset = 0);

World generate_world(const WorldSpec& spec);

/// scans/NNNNNN.bin, poses.txt and places.txt ("scan_idx place_id").
void write_world(const World& world, const std::filesystem::path& dir);
std::vector<std::size_t> read_place_ids(const std::filesystem::path& path);

}  // namespace rvm::synth
