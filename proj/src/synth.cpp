#include "rvm/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "rvm/error.hpp"

namespace rvm::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kEps = 1e-9;

std::optional<double> hit_box(const Box& b, const Vec3& o, const Vec3& d) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double ox = o[0] - b.cx, oy = o[1] - b.cy;
  const double lo[3] = {c * ox + s * oy, -s * ox + c * oy, o[2]};
  const double ld[3] = {c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]};
  const double mins[3] = {-b.half_x, -b.half_y, b.zmin};
  const double maxs[3] = {b.half_x, b.half_y, b.zmax};
  double tnear = -std::numeric_limits<double>::infinity();
  double tfar = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(ld[a]) < 1e-15) {
      if (lo[a] < mins[a] || lo[a] > maxs[a]) return std::nullopt;
      continue;
    }
    double t1 = (mins[a] - lo[a]) / ld[a];
    double t2 = (maxs[a] - lo[a]) / ld[a];
    if (t1 > t2) std::swap(t1, t2);
    tnear = std::max(tnear, t1);
    tfar = std::min(tfar, t2);
  }
  if (tnear > tfar || tnear <= kEps) return std::nullopt;
  return tnear;
}

std::optional<double> hit_cylinder(const Cylinder& cy, const Vec3& o, const Vec3& d) {
  std::optional<double> best;
  const auto consider = [&](double t) {
    if (t > kEps && (!best || t < *best)) best = t;
  };
  const double ox = o[0] - cy.cx, oy = o[1] - cy.cy;
  const double a = d[0] * d[0] + d[1] * d[1];
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d[0] + oy * d[1]);
    const double c = ox * ox + oy * oy - cy.radius * cy.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      const double z = o[2] + t * d[2];
      if (z >= cy.zmin && z <= cy.zmax) consider(t);
    }
  }
  if (std::fabs(d[2]) > 1e-15) {
    for (double zc : {cy.zmin, cy.zmax}) {
      const double t = (zc - o[2]) / d[2];
      const double x = ox + t * d[0], y = oy + t * d[1];
      if (x * x + y * y <= cy.radius * cy.radius) consider(t);
    }
  }
  return best;
}

}  // namespace

std::optional<double> Scene::intersect(const Vec3& origin, const Vec3& dir) const {
  std::optional<double> best;
  for (const auto& b : boxes)
    if (auto t = hit_box(b, origin, dir); t && (!best || *t < *best)) best = t;
  for (const auto& c : cylinders)
    if (auto t = hit_cylinder(c, origin, dir); t && (!best || *t < *best)) best = t;
  return best;
}

ProjectionConfig WorldSpec::default_sensor() {
  ProjectionConfig s;
  s.height = 16;
  s.width = 180;
  s.fov_up = 12.5 * kDeg;
  s.fov_down = 12.5 * kDeg;
  s.max_range = 50.0;
  return s;
}

void WorldSpec::validate() const {
  if (places < 2) throw ContractError("synth: at least two places are required");
  if (revisits < 1) throw ContractError("synth: at least one visit per place is required");
  if (obstacles + shared_obstacles < 1)
    throw ContractError("synth: scenes without obstacles are degenerate");
  if (shared_displacement < 0.0 || range_noise < 0.0)
    throw ContractError("synth: displacement and noise must be nonnegative");
  if (yaw_jitter < 0.0 || translation_jitter < 0.0)
    throw ContractError("synth: jitter ranges must be nonnegative");
  if (!(min_dist > 0.0 && max_dist > min_dist))
    throw ContractError("synth: need 0 < min_dist < max_dist");
  if (!(box_half_min > 0.0 && box_half_max >= box_half_min))
    throw ContractError("synth: invalid box size range");
  if (!(cylinder_radius_min > 0.0 && cylinder_radius_max >= cylinder_radius_min))
    throw ContractError("synth: invalid cylinder radius range");
  if (!(height_max >= height_min && height_min > obstacle_base))
    throw ContractError("synth: invalid obstacle height range");
  const double clearance = std::max(box_half_max * std::numbers::sqrt2, cylinder_radius_max) +
                           (translation_jitter + shared_displacement) * std::numbers::sqrt2;
  if (min_dist <= clearance)
    throw ContractError("synth: min_dist too small, obstacles could enclose the sensor");
  if (place_spacing <= 2.0 * (max_dist + sensor.max_range))
    throw ContractError("synth: place_spacing must exceed twice (max_dist + max_range)");
  sensor.validate();
}

WorldSpec WorldSpec::from_keys(const KeyValues& kv) {
  WorldSpec s;
  s.seed = kv.get_u64("seed", s.seed);
  s.places = kv.get_size("places", s.places);
  s.revisits = kv.get_size("revisits", s.revisits);
  s.yaw_jitter = kv.get_double("yaw_jitter", s.yaw_jitter);
  s.translation_jitter = kv.get_double("translation_jitter", s.translation_jitter);
  s.obstacles = kv.get_size("obstacles", s.obstacles);
  s.shared_obstacles = kv.get_size("shared_obstacles", s.shared_obstacles);
  s.shared_displacement = kv.get_double("shared_displacement", s.shared_displacement);
  s.range_noise = kv.get_double("range_noise", s.range_noise);
  s.min_dist = kv.get_double("min_dist", s.min_dist);
  s.max_dist = kv.get_double("max_dist", s.max_dist);
  s.box_half_min = kv.get_double("box_half_min", s.box_half_min);
  s.box_half_max = kv.get_double("box_half_max", s.box_half_max);
  s.cylinder_radius_min = kv.get_double("cylinder_radius_min", s.cylinder_radius_min);
  s.cylinder_radius_max = kv.get_double("cylinder_radius_max", s.cylinder_radius_max);
  s.obstacle_base = kv.get_double("obstacle_base", s.obstacle_base);
  s.height_min = kv.get_double("height_min", s.height_min);
  s.height_max = kv.get_double("height_max", s.height_max);
  s.place_spacing = kv.get_double("place_spacing", s.place_spacing);
  s.sensor.height = kv.get_size("height", s.sensor.height);
  s.sensor.width = kv.get_size("width", s.sensor.width);
  s.sensor.fov_up = kv.get_double("fov_up_deg", s.sensor.fov_up / kDeg) * kDeg;
  s.sensor.fov_down = kv.get_double("fov_down_deg", s.sensor.fov_down / kDeg) * kDeg;
  s.sensor.max_range = kv.get_double("max_range", s.sensor.max_range);
  s.validate();
  return s;
}

WorldSpec WorldSpec::load(const std::filesystem::path& path) {
  return from_keys(KeyValues::load(path));
}

namespace {

struct Obstacle {
  bool is_box = true;
  Box box;
  Cylinder cylinder;
};

// Obstacle placed relative to the origin.
Obstacle random_obstacle(const WorldSpec& spec, Rng& rng) {
  const double dist = uniform(rng, spec.min_dist, spec.max_dist);
  const double ang = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double cx = dist * std::cos(ang), cy = dist * std::sin(ang);
  const double top = uniform(rng, spec.height_min, spec.height_max);
  Obstacle o;
  o.is_box = uniform01(rng) < 0.6;
  if (o.is_box) {
    o.box = Box{cx, cy, uniform(rng, 0.0, std::numbers::pi),
                uniform(rng, spec.box_half_min, spec.box_half_max),
                uniform(rng, spec.box_half_min, spec.box_half_max), spec.obstacle_base, top};
  } else {
    o.cylinder = Cylinder{cx, cy, uniform(rng, spec.cylinder_radius_min, spec.cylinder_radius_max),
                          spec.obstacle_base, top};
  }
  return o;
}

void place_obstacle(Scene& sc, Obstacle o, double dx, double dy) {
  if (o.is_box) {
    o.box.cx += sc.center[0] + dx;
    o.box.cy += sc.center[1] + dy;
    sc.boxes.push_back(o.box);
  } else {
    o.cylinder.cx += sc.center[0] + dx;
    o.cylinder.cy += sc.center[1] + dy;
    sc.cylinders.push_back(o.cylinder);
  }
}

}  // namespace

std::vector<Scene> generate_scenes(const WorldSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Obstacle> shared;
  for (std::size_t i = 0; i < spec.shared_obstacles; ++i) shared.push_back(random_obstacle(spec, rng));
  std::vector<Scene> scenes;
  for (std::size_t p = 0; p < spec.places; ++p) {
    Scene sc;
    sc.center = {static_cast<double>(p) * spec.place_spacing, 0.0, 0.0};
    for (const auto& o : shared)
      place_obstacle(sc, o, uniform(rng, -spec.shared_displacement, spec.shared_displacement),
                     uniform(rng, -spec.shared_displacement, spec.shared_displacement));
    for (std::size_t i = 0; i < spec.obstacles; ++i) place_obstacle(sc, random_obstacle(spec, rng), 0, 0);
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

Pose jittered_pose(const WorldSpec& spec, const Scene& scene, Rng& rng, double yaw_offset) {
  const double dx = uniform(rng, -spec.translation_jitter, spec.translation_jitter);
  const double dy = uniform(rng, -spec.translation_jitter, spec.translation_jitter);
  const double yaw = uniform(rng, -spec.yaw_jitter, spec.yaw_jitter) + yaw_offset;
  return Pose::from_yaw(yaw, {scene.center[0] + dx, scene.center[1] + dy, scene.center[2]});
}

std::vector<Visit> default_visits(const WorldSpec& spec, const std::vector<Scene>& scenes) {
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Visit> visits;
  for (std::size_t r = 0; r < spec.revisits; ++r)
    for (std::size_t p = 0; p < scenes.size(); ++p)
      visits.push_back({p, jittered_pose(spec, scenes[p], rng)});
  return visits;
}

std::vector<Visit> extra_visits(const WorldSpec& spec, const std::vector<Scene>& scenes,
                                const std::vector<double>& round_yaw_offsets, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Visit> visits;
  for (double offset : round_yaw_offsets)
    for (std::size_t p = 0; p < scenes.size(); ++p)
      visits.push_back({p, jittered_pose(spec, scenes[p], rng, offset)});
  return visits;
}

PointCloud render_scan(const Scene& scene, const Pose& pose, const ProjectionConfig& sensor,
                       double noise, std::uint64_t noise_seed) {
  sensor.validate();
  Rng rng(noise_seed);
  PointCloud cloud;
  const double w = static_cast<double>(sensor.width), h = static_cast<double>(sensor.height);
  for (std::size_t v = 0; v < sensor.height; ++v) {
    const double elev = (1.0 - (static_cast<double>(v) + 0.5) / h) * sensor.fov() - sensor.fov_up;
    for (std::size_t u = 0; u < sensor.width; ++u) {
      const double az = std::numbers::pi * (1.0 - 2.0 * (static_cast<double>(u) + 0.5) / w);
      const Vec3 local{std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev)};
      const auto& r = pose.rotation;
      const Vec3 dir{r[0] * local[0] + r[1] * local[1] + r[2] * local[2],
                     r[3] * local[0] + r[4] * local[1] + r[5] * local[2],
                     r[6] * local[0] + r[7] * local[1] + r[8] * local[2]};
      const auto hit = scene.intersect(pose.translation, dir);
      if (!hit) continue;
      const double t = noise > 0.0 ? *hit + uniform(rng, -noise, noise) : *hit;
      if (t <= 0.0 || t > sensor.max_range) continue;
      cloud.points.push_back({t * local[0], t * local[1], t * local[2]});
    }
  }
  return cloud;
}

World render_world(const WorldSpec& spec, std::vector<Scene> scenes,
                   const std::vector<Visit>& visits, std::uint64_t noise_offset) {
  World world;
  for (std::size_t i = 0; i < visits.size(); ++i) {
    const auto& v = visits[i];
    if (v.place >= scenes.size())
      throw ContractError("visit references unknown place " + std::to_string(v.place));
    world.scans.push_back(render_scan(scenes[v.place], v.pose, spec.sensor, spec.range_noise,
                                      spec.seed * 1000003ULL + noise_offset + i));
    world.poses.push_back(v.pose);
    world.place_ids.push_back(v.place);
  }
  world.scenes = std::move(scenes);
  return world;
}

World generate_world(const WorldSpec& spec) {
  auto scenes = generate_scenes(spec);
  const auto visits = default_visits(spec, scenes);
  return render_world(spec, std::move(scenes), visits);
}

void write_world(const World& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "scans");
  for (std::size_t i = 0; i < world.scans.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.bin", i);
    write_scan(dir / "scans" / name, world.scans[i]);
  }
  write_poses(dir / "poses.txt", world.poses);
  std::ofstream os(dir / "places.txt");
  if (!os) throw IoError("cannot write " + (dir / "places.txt").string());
  for (std::size_t i = 0; i < world.place_ids.size(); ++i) os << i << ' ' << world.place_ids[i] << '\n';
}

std::vector<std::size_t> read_place_ids(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::size_t> ids;
  std::size_t idx = 0, place = 0;
  while (is >> idx >> place) {
    if (idx != ids.size()) throw IoError(path.string() + ": scan indices must be consecutive");
    ids.push_back(place);
  }
  return ids;
}

}  // namespace rvm::synth
