#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "rvm/error.hpp"
#include "rvm/pipeline.hpp"
#include "rvm/rangeview.hpp"
#include "rvm/retrieval.hpp"
#include "rvm/selfcheck.hpp"
#include "rvm/synth.hpp"
#include "rvm/training.hpp"

namespace py = pybind11;
using namespace rvm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud to_cloud(const Array& points) {
  if (points.ndim() != 2 || points.shape(1) != 3)
    throw DimensionError("points must have shape (N, 3)");
  PointCloud pc;
  const auto p = points.unchecked<2>();
  for (py::ssize_t i = 0; i < p.shape(0); ++i) pc.points.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return pc;
}

Array from_cloud(const PointCloud& pc) {
  Array out({static_cast<py::ssize_t>(pc.size()), py::ssize_t{3}});
  auto o = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int k = 0; k < 3; ++k) o(i, k) = pc.points[i][k];
  return out;
}

Pose to_pose(const Array& m) {
  if (m.ndim() != 2 || m.shape(0) < 3 || m.shape(0) > 4 || m.shape(1) != 4)
    throw DimensionError("pose must be a 3x4 or 4x4 matrix");
  const auto a = m.unchecked<2>();
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation[r * 3 + c] = a(r, c);
    p.translation[r] = a(r, 3);
  }
  return p;
}

Array from_pose(const Pose& p) {
  Array out({py::ssize_t{4}, py::ssize_t{4}});
  auto o = out.mutable_unchecked<2>();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) o(r, c) = 0.0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) o(r, c) = p.rotation[r * 3 + c];
    o(r, 3) = p.translation[r];
  }
  o(3, 3) = 1.0;
  return out;
}

Array from_image(const RangeImage& img) {
  Array out({static_cast<py::ssize_t>(img.config.height), static_cast<py::ssize_t>(img.config.width)});
  std::memcpy(out.mutable_data(), img.ranges.data(), img.ranges.size() * sizeof(double));
  return out;
}

RangeImage to_image(const Array& a, const ProjectionConfig& cfg) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != cfg.height ||
      static_cast<std::size_t>(a.shape(1)) != cfg.width)
    throw DimensionError("range image must have shape (" + std::to_string(cfg.height) + ", " +
                         std::to_string(cfg.width) + ")");
  RangeImage img(cfg);
  std::memcpy(img.ranges.data(), a.data(), img.ranges.size() * sizeof(double));
  return img;
}

Array from_vector(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
  return out;
}

PipelineConfig config_from(const std::string& text) {
  if (text == "kitti" || text == "nclt" || text == "toy")
    return PipelineConfig::from_keys(KeyValues::parse("preset=" + text + "\n"));
  return PipelineConfig::from_keys(KeyValues::parse(text));
}

}  // namespace

PYBIND11_MODULE(_rvm, m) {
  m.doc() = "Range-view LiDAR place recognition";

  auto contract = py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  (void)contract;

  m.def("config_text", [](const std::string& preset_or_text) { return config_from(preset_or_text).to_text(); },
        py::arg("preset_or_text"),
        "Normalized key=value text for a preset name or config text.");

  m.def(
      "project",
      [](const Array& points, const std::string& config) {
        return from_image(build_range_image(to_cloud(points), config_from(config).projection));
      },
      py::arg("points"), py::arg("config") = "kitti",
      "Range image (H, W) of an (N, 3) cloud; -1 marks empty pixels.");

  m.def(
      "overlap",
      [](const Array& points_a, const Array& pose_a, const Array& points_b, const Array& pose_b,
         const std::string& config, double eps_rel) {
        const auto cfg = config_from(config).projection;
        const auto a = to_cloud(points_a);
        return compute_overlap(build_range_image(a, cfg), to_pose(pose_a), to_cloud(points_b),
                               to_pose(pose_b), eps_rel);
      },
      py::arg("points_a"), py::arg("pose_a"), py::arg("points_b"), py::arg("pose_b"),
      py::arg("config") = "kitti", py::arg("eps_rel") = 0.05);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init([](const std::string& config) { return Pipeline(config_from(config)); }),
           py::arg("config") = "kitti", "Randomly initialized model from a preset name or config text.")
      .def_property_readonly("config_text", [](const Pipeline& p) { return p.config().to_text(); })
      .def_property_readonly("input_shape",
                             [](const Pipeline& p) {
                               return py::make_tuple(p.config().projection.height,
                                                     p.config().projection.width);
                             })
      .def("embed",
           [](const Pipeline& p, const Array& ranges) {
             return from_vector(p.embed(to_image(ranges, p.config().projection), 0).values);
           },
           py::arg("ranges"), "Descriptor of one range image.")
      .def("save", [](const Pipeline& p, const std::string& path) { p.save(path); })
      .def("load", [](Pipeline& p, const std::string& path) { p.load(path); });

  m.def(
      "train",
      [](Pipeline& model, const std::vector<Array>& images, const std::vector<std::tuple<std::size_t, std::size_t, double>>& labels,
         const std::string& train_config) {
        std::vector<Tensor> inputs;
        for (const auto& a : images) inputs.push_back(to_network_input(to_image(a, model.config().projection)));
        std::vector<OverlapLabel> ol;
        for (const auto& [q, c, o] : labels) ol.push_back({q, c, o});
        const auto tc = TrainConfig::from_keys(KeyValues::parse(train_config));
        const auto tuples = build_tuples(ol, tc.overlap_threshold, inputs.size(), inputs.size(), tc.seed);
        py::gil_scoped_release release;
        const auto report = train(model, inputs, tuples, tc);
        std::vector<std::tuple<std::size_t, double, double>> out;
        for (const auto& e : report.epochs) out.emplace_back(e.epoch, e.mean_loss, e.val_f1max);
        return out;
      },
      py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("train_config") = "",
      "Trains in place; returns (epoch, mean_loss, val_f1max) rows.");

  m.def(
      "search",
      [](const Array& db, const Array& query, std::size_t k) {
        if (db.ndim() != 2 || query.ndim() != 1 || query.shape(0) != db.shape(1))
          throw DimensionError("search expects db (n, d) and query (d,)");
        DescriptorDb d(static_cast<std::size_t>(db.shape(1)));
        for (py::ssize_t i = 0; i < db.shape(0); ++i)
          d.add(static_cast<std::uint32_t>(i), std::span<const double>(db.data(i, 0), d.dim()));
        std::vector<std::pair<std::uint32_t, double>> out;
        for (const auto& h : db_search(d, std::span<const double>(query.data(), d.dim()), k))
          out.emplace_back(h.id, h.distance);
        return out;
      },
      py::arg("db"), py::arg("query"), py::arg("k"), "(row, distance) pairs, nearest first.");

  m.def(
      "pr_metrics",
      [](const std::vector<double>& similarity, const std::vector<bool>& positive) {
        if (similarity.size() != positive.size())
          throw DimensionError("similarity and positive differ in length");
        std::vector<ScoredPair> s;
        for (std::size_t i = 0; i < similarity.size(); ++i) s.push_back({similarity[i], positive[i]});
        const auto pr = rvm::pr_metrics(s);
        return py::dict(py::arg("auc") = pr.auc, py::arg("f1max") = pr.f1max);
      },
      py::arg("similarity"), py::arg("positive"));

  m.def(
      "recall_at",
      [](const std::vector<std::vector<std::uint32_t>>& ranked,
         const std::vector<std::vector<std::uint32_t>>& truth, std::size_t n, bool percent) {
        return rvm::recall_at(ranked, truth, n, percent).recall;
      },
      py::arg("ranked"), py::arg("truth"), py::arg("n"), py::arg("percent") = false);

  m.def(
      "imtrihard_loss",
      [](const Array& q, const std::vector<Array>& pos, const std::vector<Array>& neg, double alpha,
         double lambda) {
        auto t = [](const Array& a) {
          return Tensor({static_cast<std::size_t>(a.size())}, std::vector<double>(a.data(), a.data() + a.size()));
        };
        std::vector<Tensor> p, n;
        for (const auto& a : pos) p.push_back(t(a));
        for (const auto& a : neg) n.push_back(t(a));
        LossConfig cfg;
        cfg.alpha = alpha;
        cfg.lambda = lambda;
        return imtrihard_loss(t(q), p, n, cfg).item();
      },
      py::arg("q"), py::arg("positives"), py::arg("negatives"), py::arg("alpha") = 0.25,
      py::arg("lambda_") = 1e-4);

  m.def(
      "generate_world",
      [](std::uint64_t seed, std::size_t places, std::size_t revisits) {
        synth::WorldSpec spec;
        spec.seed = seed;
        spec.places = places;
        spec.revisits = revisits;
        const auto w = synth::generate_world(spec);
        py::list scans, poses;
        for (const auto& s : w.scans) scans.append(from_cloud(s));
        for (const auto& p : w.poses) poses.append(from_pose(p));
        return py::make_tuple(scans, poses, w.place_ids);
      },
      py::arg("seed") = 7, py::arg("places") = 20, py::arg("revisits") = 3,
      "(scans, 4x4 poses, place ids) of a synthetic world.");

  m.def("synth_sensor_config", [] {
    PipelineConfig c = PipelineConfig::toy();
    c.projection = synth::WorldSpec::default_sensor();
    return c.to_text();
  });

  m.def("selfcheck", [] {
    std::vector<std::tuple<std::string, bool, std::string>> out;
    for (const auto& r : run_selfcheck()) out.emplace_back(r.name, r.passed, r.detail);
    return out;
  });
}
