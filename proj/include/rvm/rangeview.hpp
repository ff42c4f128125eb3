#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rvm/tensor.hpp"

namespace rvm {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Spherical projection parameters. Angles are radians, ranges meters.
struct ProjectionConfig {
  std::size_t width = 900;
  std::size_t height = 64;
  double fov_up = 3.0 * 3.14159265358979323846 / 180.0;
  double fov_down = 25.0 * 3.14159265358979323846 / 180.0;
  double max_range = 50.0;

  double fov() const { return fov_up + fov_down; }
  /// Throws ConfigError unless fov > 0, width/height >= 2 and max_range > 0.
  void validate() const;

  /// 64-beam 1×64×900 images, 50 m cut-off.
  static ProjectionConfig kitti();
  /// 32-beam 1×32×900 images, 60 m cut-off.
  static ProjectionConfig nclt();
};

inline constexpr double kNoReturn = -1.0;

struct RangeImage {
  ProjectionConfig config;
  std::vector<double> ranges;  // row-major height×width, kNoReturn where empty

  RangeImage() = default;
  explicit RangeImage(const ProjectionConfig& cfg)
      : config(cfg), ranges(cfg.width * cfg.height, kNoReturn) {}

  double at(std::size_t v, std::size_t u) const { return ranges[v * config.width + u]; }
  double& at(std::size_t v, std::size_t u) { return ranges[v * config.width + u]; }
  std::size_t valid_count() const;
};

struct Pose {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};

  /// Rotation by `yaw` about +z, then translation.
  static Pose from_yaw(double yaw, const Vec3& t);
  /// Throws ContractError unless RᵀR = I and det R = +1 within 1e-9.
  void validate() const;
  Vec3 apply(const Vec3& p) const;          // sensor -> world
  Vec3 apply_inverse(const Vec3& p) const;  // world -> sensor
};

struct OverlapLabel {
  std::size_t query = 0;
  std::size_t candidate = 0;
  double overlap = 0.0;
};

struct Pixel {
  std::size_t u = 0;
  std::size_t v = 0;
  double range = 0.0;
};

/// Image coordinates of one point; absent when r = 0, r > max_range or the
/// elevation falls outside the vertical field of view.
std::optional<Pixel> project_point(const Vec3& p, const ProjectionConfig& cfg);

/// Nearest return wins when several points hit the same pixel.
RangeImage build_range_image(const PointCloud& cloud, const ProjectionConfig& cfg);

/// Re-expresses points given in `from`'s sensor frame in `to`'s sensor frame.
PointCloud transform_cloud(const PointCloud& cloud, const Pose& from, const Pose& to);

/// Fraction of valid pixels of `image_a` whose counterpart in the reprojection
/// of `cloud_b` exists and agrees within eps_rel·r_a. Query-anchored.
double compute_overlap(const RangeImage& image_a, const Pose& pose_a, const PointCloud& cloud_b,
                       const Pose& pose_b, double eps_rel = 0.05);

/// compute_overlap for every pair j < i, anchored at the later scan i.
std::vector<OverlapLabel> pairwise_overlaps(const std::vector<RangeImage>& images,
                                            const std::vector<PointCloud>& clouds,
                                            const std::vector<Pose>& poses, double eps_rel = 0.05);

/// One query scan with overlap-selected positive and negative references.
struct TrainingTuple {
  std::size_t query = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

/// Labels are used symmetrically: a pair stored once as (i, j) serves both
/// queries. Positives have overlap > threshold, negatives <= threshold; up to
/// k_p / k_n of each are drawn with a seeded shuffle. Queries lacking either
/// set are skipped.
std::vector<TrainingTuple> build_tuples(const std::vector<OverlapLabel>& labels, double threshold,
                                        std::size_t k_p, std::size_t k_n, std::uint64_t seed);

/// Network input [1×H×W]: ranges scaled by 1/max_range, no-return pixels set to 0.
Tensor to_network_input(const RangeImage& image);

// File formats.
PointCloud read_scan(const std::filesystem::path& path);
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses);
/// OMRV: magic, u32 h, u32 w, f32 max_range, h·w f32 ranges. The field of view
/// is not stored; `fov_hint` supplies it when known.
RangeImage read_range_image(const std::filesystem::path& path,
                            const ProjectionConfig* fov_hint = nullptr);
void write_range_image(const std::filesystem::path& path, const RangeImage& image);
std::vector<OverlapLabel> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<OverlapLabel>& labels);

/// Sorted regular files in `dir` with the given extension.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::string& extension);

}  // namespace rvm
