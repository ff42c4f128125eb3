#include "rvm/rangeview.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "rvm/binio.hpp"
#include "rvm/error.hpp"
#include "rvm/random.hpp"

namespace rvm {

void ProjectionConfig::validate() const {
  if (!(fov_up >= 0.0 && fov_down >= 0.0 && fov() > 0.0))
    throw ConfigError("projection: field of view must be positive (up " + std::to_string(fov_up) +
                      ", down " + std::to_string(fov_down) + ")");
  if (width < 2 || height < 2)
    throw ConfigError("projection: image must be at least 2x2, got " + std::to_string(height) +
                      "x" + std::to_string(width));
  if (!(max_range > 0.0)) throw ConfigError("projection: max_range must be positive");
}

ProjectionConfig ProjectionConfig::kitti() { return ProjectionConfig{}; }

ProjectionConfig ProjectionConfig::nclt() {
  ProjectionConfig c;
  c.height = 32;
  c.fov_up = 10.67 * std::numbers::pi / 180.0;
  c.fov_down = 30.67 * std::numbers::pi / 180.0;
  c.max_range = 60.0;
  return c;
}

std::size_t RangeImage::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(ranges.begin(), ranges.end(), [](double r) { return r > 0.0; }));
}

Pose Pose::from_yaw(double yaw, const Vec3& t) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Pose p;
  p.rotation = {c, -s, 0, s, c, 0, 0, 0, 1};
  p.translation = t;
  return p;
}

void Pose::validate() const {
  const auto& r = rotation;
  for (double v : r)
    if (!std::isfinite(v)) throw ContractError("pose: non-finite rotation");
  for (double v : translation)
    if (!std::isfinite(v)) throw ContractError("pose: non-finite translation");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > 1e-9)
        throw ContractError("pose: rotation is not orthonormal");
    }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det - 1.0) > 1e-9) throw ContractError("pose: rotation determinant is not +1");
}

Vec3 Pose::apply(const Vec3& p) const {
  const auto& r = rotation;
  return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation[0],
          r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation[1],
          r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation[2]};
}

Vec3 Pose::apply_inverse(const Vec3& p) const {
  const auto& r = rotation;
  const Vec3 d{p[0] - translation[0], p[1] - translation[1], p[2] - translation[2]};
  return {r[0] * d[0] + r[3] * d[1] + r[6] * d[2], r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
          r[2] * d[0] + r[5] * d[1] + r[8] * d[2]};
}

std::optional<Pixel> project_point(const Vec3& p, const ProjectionConfig& cfg) {
  const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  if (r == 0.0 || r > cfg.max_range) return std::nullopt;
  const double w = static_cast<double>(cfg.width);
  const double h = static_cast<double>(cfg.height);
  const double uf = std::floor(0.5 * (1.0 - std::atan2(p[1], p[0]) / std::numbers::pi) * w);
  const double vf = std::floor((1.0 - (std::asin(p[2] / r) + cfg.fov_up) / cfg.fov()) * h);
  if (vf < 0.0 || vf >= h) return std::nullopt;
  std::size_t u = uf <= 0.0 ? 0 : static_cast<std::size_t>(uf);
  if (u >= cfg.width) u = 0;  // azimuth -π lands exactly on w; it is the same column as 0
  return Pixel{u, static_cast<std::size_t>(vf), r};
}

RangeImage build_range_image(const PointCloud& cloud, const ProjectionConfig& cfg) {
  cfg.validate();
  RangeImage image(cfg);
  for (const auto& p : cloud.points) {
    const auto px = project_point(p, cfg);
    if (!px) continue;
    double& cell = image.at(px->v, px->u);
    if (cell == kNoReturn || px->range < cell) cell = px->range;
  }
  return image;
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& from, const Pose& to) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(to.apply_inverse(from.apply(p)));
  out.intensity = cloud.intensity;
  return out;
}

double compute_overlap(const RangeImage& image_a, const Pose& pose_a, const PointCloud& cloud_b,
                       const Pose& pose_b, double eps_rel) {
  pose_a.validate();
  pose_b.validate();
  const std::size_t valid = image_a.valid_count();
  if (valid == 0) return 0.0;
  const RangeImage reproj = build_range_image(transform_cloud(cloud_b, pose_b, pose_a),
                                              image_a.config);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < image_a.ranges.size(); ++i) {
    const double ra = image_a.ranges[i];
    const double rb = reproj.ranges[i];
    if (ra > 0.0 && rb > 0.0 && std::fabs(rb - ra) <= eps_rel * ra) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(valid);
}

std::vector<OverlapLabel> pairwise_overlaps(const std::vector<RangeImage>& images,
                                            const std::vector<PointCloud>& clouds,
                                            const std::vector<Pose>& poses, double eps_rel) {
  if (images.size() != clouds.size() || images.size() != poses.size())
    throw ContractError("pairwise_overlaps: " + std::to_string(images.size()) + " images, " +
                        std::to_string(clouds.size()) + " clouds, " +
                        std::to_string(poses.size()) + " poses");
  std::vector<OverlapLabel> out;
  out.reserve(images.size() * (images.size() - (images.empty() ? 0 : 1)) / 2);
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      out.push_back({i, j, compute_overlap(images[i], poses[i], clouds[j], poses[j], eps_rel)});
  return out;
}

std::vector<TrainingTuple> build_tuples(const std::vector<OverlapLabel>& labels, double threshold,
                                        std::size_t k_p, std::size_t k_n, std::uint64_t seed) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ContractError("build_tuples: threshold must lie in (0, 1)");
  if (k_p == 0 || k_n == 0) throw ContractError("build_tuples: k_p and k_n must be >= 1");

  // Explicit (query, candidate) entries take precedence over mirrored ones.
  std::map<std::size_t, std::map<std::size_t, double>> table;
  for (const auto& l : labels)
    if (l.query != l.candidate) table[l.query][l.candidate] = l.overlap;
  for (const auto& l : labels)
    if (l.query != l.candidate) table[l.candidate].try_emplace(l.query, l.overlap);

  Rng rng(seed);
  std::vector<TrainingTuple> tuples;
  for (const auto& [query, cands] : table) {
    TrainingTuple t;
    t.query = query;
    for (const auto& [cand, overlap] : cands)
      (overlap > threshold ? t.positives : t.negatives).push_back(cand);
    if (t.positives.empty() || t.negatives.empty()) continue;
    shuffle(std::span(t.positives), rng);
    shuffle(std::span(t.negatives), rng);
    if (t.positives.size() > k_p) t.positives.resize(k_p);
    if (t.negatives.size() > k_n) t.negatives.resize(k_n);
    std::sort(t.positives.begin(), t.positives.end());
    std::sort(t.negatives.begin(), t.negatives.end());
    tuples.push_back(std::move(t));
  }
  return tuples;
}

Tensor to_network_input(const RangeImage& image) {
  const auto& cfg = image.config;
  std::vector<double> values(image.ranges.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = image.ranges[i] > 0.0 ? image.ranges[i] / cfg.max_range : 0.0;
  return Tensor({1, cfg.height, cfg.width}, std::move(values));
}

// ------------------------------------------------------------------- file IO

PointCloud read_scan(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open scan " + path.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % 16 != 0) throw IoError(path.string() + ": size is not a multiple of 16 bytes");
  is.seekg(0);
  PointCloud pc;
  const std::size_t n = bytes / 16;
  pc.points.reserve(n);
  pc.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float x = binio::read_le<float>(is), y = binio::read_le<float>(is),
                z = binio::read_le<float>(is), it = binio::read_le<float>(is);
    pc.points.push_back({x, y, z});
    pc.intensity.push_back(it);
  }
  return pc;
}

void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write scan " + path.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (double c : cloud.points[i]) binio::write_le<float>(os, static_cast<float>(c));
    binio::write_le<float>(os, cloud.intensity.empty() ? 0.0f : cloud.intensity[i]);
  }
}

std::vector<Pose> read_poses(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double v[12];
    for (double& x : v)
      if (!(ls >> x))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 12 values");
    Pose p;
    p.rotation = {v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]};
    p.translation = {v[3], v[7], v[11]};
    poses.push_back(p);
  }
  return poses;
}

void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write pose file " + path.string());
  os << std::setprecision(17);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation[r * 3 + c] << ' ';
      os << p.translation[r] << (r == 2 ? '\n' : ' ');
    }
  }
}

RangeImage read_range_image(const std::filesystem::path& path, const ProjectionConfig* fov_hint) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open range image " + path.string());
  binio::expect_magic(is, "OMRV", path.string());
  ProjectionConfig cfg;
  cfg.height = binio::read_le<std::uint32_t>(is);
  cfg.width = binio::read_le<std::uint32_t>(is);
  cfg.max_range = binio::read_le<float>(is);
  if (fov_hint != nullptr) {
    cfg.fov_up = fov_hint->fov_up;
    cfg.fov_down = fov_hint->fov_down;
  } else {
    cfg.fov_up = cfg.fov_down = 0.0;
  }
  RangeImage image;
  image.config = cfg;
  image.ranges.resize(cfg.height * cfg.width);
  for (auto& r : image.ranges) r = binio::read_le<float>(is);
  return image;
}

void write_range_image(const std::filesystem::path& path, const RangeImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write range image " + path.string());
  binio::write_magic(os, "OMRV");
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.config.height));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(image.config.width));
  binio::write_le<float>(os, static_cast<float>(image.config.max_range));
  for (double r : image.ranges) binio::write_le<float>(os, static_cast<float>(r));
}

std::vector<OverlapLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open label file " + path.string());
  std::vector<OverlapLabel> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    OverlapLabel l;
    if (!(ls >> l.query >> l.candidate >> l.overlap))
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected 'query_idx cand_idx overlap'");
    labels.push_back(l);
  }
  return labels;
}

void write_labels(const std::filesystem::path& path, const std::vector<OverlapLabel>& labels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write label file " + path.string());
  os << std::setprecision(17);
  for (const auto& l : labels) os << l.query << ' ' << l.candidate << ' ' << l.overlap << '\n';
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::string& extension) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == extension)
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace rvm
