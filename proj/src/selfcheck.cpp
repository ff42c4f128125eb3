#include "rvm/selfcheck.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rvm/backbone.hpp"
#include "rvm/error.hpp"
#include "rvm/gdg.hpp"
#include "rvm/gradcheck.hpp"
#include "rvm/olm.hpp"
#include "rvm/ops.hpp"
#include "rvm/pipeline.hpp"
#include "rvm/retrieval.hpp"
#include "rvm/ssm.hpp"
#include "rvm/synth.hpp"
#include "rvm/training.hpp"

namespace rvm {

namespace {

using Inputs = std::vector<Tensor>;
using Fn = std::function<Tensor(const Inputs&)>;

GradCase op_case(std::string name, std::uint64_t seed, std::function<Inputs(Rng&)> make,
                        Fn fn) {
  return {std::move(name), [seed, make, fn] {
            Rng rng(seed);
            const Inputs in = make(rng);
            return gradcheck(fn, in, rng);
          }};
}

Inputs rt(Rng& rng, std::initializer_list<Shape> shapes, double lo = -1.0, double hi = 1.0) {
  Inputs out;
  for (const auto& s : shapes) out.push_back(uniform_tensor(s, rng, lo, hi));
  return out;
}

OlmConfig toy_olm(bool train) {
  OlmConfig cfg;
  cfg.d_model = 4;
  cfg.expand = 6;
  cfg.state = 3;
  cfg.train_mode = train;
  return cfg;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> c;
  const auto pair34 = [](Rng& r) { return rt(r, {{3, 4}, {3, 4}}); };
  c.push_back(op_case("add", 1, pair34, [](const Inputs& v) { return add(v[0], v[1]); }));
  c.push_back(op_case("sub", 1, pair34, [](const Inputs& v) { return sub(v[0], v[1]); }));
  c.push_back(op_case("mul", 1, pair34, [](const Inputs& v) { return mul(v[0], v[1]); }));
  c.push_back(op_case("scale", 1, pair34, [](const Inputs& v) { return scale(v[0], -1.7); }));
  c.push_back(op_case("add_scalar", 1, pair34, [](const Inputs& v) { return add_scalar(v[0], 0.3); }));
  c.push_back(op_case("exponential", 1, pair34, [](const Inputs& v) { return exponential(v[0]); }));
  c.push_back(op_case("sum", 1, pair34, [](const Inputs& v) { return sum(v[0]); }));
  c.push_back(op_case("mean", 1, pair34, [](const Inputs& v) { return mean(v[1]); }));
  c.push_back(op_case("sq_dist", 1, pair34, [](const Inputs& v) { return sq_dist(v[0], v[1]); }));

  const auto act_in = [](Rng& r) { return rt(r, {{5, 3}}, -3.0, 3.0); };
  for (auto [kind, name] : {std::pair{Activation::silu, "silu"}, {Activation::softplus, "softplus"},
                            {Activation::sigmoid, "sigmoid"}, {Activation::relu, "relu"}})
    c.push_back(op_case(name, 2, act_in, [kind](const Inputs& v) { return activation(v[0], kind); }));

  const auto cube = [](Rng& r) { return rt(r, {{2, 3, 4}}); };
  c.push_back(op_case("reshape", 3, cube, [](const Inputs& v) { return reshape(v[0], {6, 4}); }));
  c.push_back(op_case("select", 3, cube, [](const Inputs& v) { return select(v[0], 1); }));
  const auto two_mats = [](Rng& r) { return rt(r, {{3, 5}, {3, 2}}); };
  c.push_back(op_case("transpose", 3, two_mats, [](const Inputs& v) { return transpose(v[0]); }));
  c.push_back(op_case("slice_cols", 3, two_mats, [](const Inputs& v) { return slice_cols(v[0], 1, 4); }));
  c.push_back(op_case("concat_cols", 3, two_mats,
                      [](const Inputs& v) { return concat_cols(std::span(v)); }));
  c.push_back(op_case("stack", 3, [](Rng& r) { return rt(r, {{3, 2}, {3, 2}}); },
                      [](const Inputs& v) { return stack(std::span(v)); }));

  const auto lin_in = [](Rng& r) { return rt(r, {{4, 3}, {3, 5}, {5}}); };
  c.push_back(op_case("matmul", 4, lin_in, [](const Inputs& v) { return matmul(v[0], v[1]); }));
  c.push_back(op_case("linear", 4, lin_in, [](const Inputs& v) { return linear(v[0], v[1], v[2]); }));
  c.push_back(op_case("linear_nobias", 4, lin_in, [](const Inputs& v) { return linear(v[0], v[1]); }));
  c.push_back(op_case("add_row_bias", 4, [](Rng& r) { return rt(r, {{4, 5}, {5}}); },
                      [](const Inputs& v) { return add_row_bias(v[0], v[1]); }));

  c.push_back(op_case("conv_vertical", 5, [](Rng& r) { return rt(r, {{2, 7, 3}, {3, 2, 3, 1}, {3}}); },
                      [](const Inputs& v) { return conv_vertical(v[0], v[1], 2, v[2]); }));
  c.push_back(op_case("conv1d_circular", 5, [](Rng& r) { return rt(r, {{2, 6}, {3, 2, 3}}); },
                      [](const Inputs& v) { return conv1d_circular(v[0], v[1]); }));
  c.push_back(op_case("conv1d_circular_depthwise", 5,
                      [](Rng& r) { return rt(r, {{6, 3}, {3, 5}, {3}}); },
                      [](const Inputs& v) { return conv1d_circular_depthwise(v[0], v[1], v[2]); }));

  const auto seq = [](Rng& r) { return rt(r, {{7, 4}}); };
  c.push_back(op_case("roll_rows", 6, seq, [](const Inputs& v) { return roll_rows(v[0], 3); }));
  c.push_back(op_case("flip_rows", 6, seq, [](const Inputs& v) { return flip_rows(v[0]); }));
  c.push_back(op_case("maxpool_rows_circular", 6, seq,
                      [](const Inputs& v) { return maxpool_rows_circular(v[0], 5); }));
  c.push_back(op_case("softmax_rows", 6, seq, [](const Inputs& v) { return softmax_rows(v[0]); }));
  c.push_back(op_case("normalize_rows", 6, seq, [](const Inputs& v) { return normalize_rows(v[0]); }));
  c.push_back(op_case("l2_normalize", 6, seq, [](const Inputs& v) { return l2_normalize(v[0]); }));
  c.push_back(op_case("layer_norm_rows", 6, [](Rng& r) { return rt(r, {{7, 4}, {4}, {4}}); },
                      [](const Inputs& v) { return layer_norm_rows(v[0], v[1], v[2]); }));
  c.push_back(op_case("vlad_aggregate", 6,
                      [](Rng& r) {
                        Inputs in = rt(r, {{6, 3}});
                        in.push_back(uniform_tensor({6, 2}, r, 0.0, 1.0));
                        in.push_back(uniform_tensor({2, 3}, r));
                        return in;
                      },
                      [](const Inputs& v) { return vlad_aggregate(v[0], v[1], v[2]); }));

  const auto scan_in = [](Rng& r) {
    Inputs in = rt(r, {{6, 3}});
    in.push_back(uniform_tensor({6, 3}, r, 0.05, 0.5));
    in.push_back(uniform_tensor({3, 4}, r, -2.0, -0.2));
    for (const Shape& s : {Shape{6, 4}, Shape{6, 4}, Shape{3}}) in.push_back(uniform_tensor(s, r));
    return in;
  };
  for (auto [algo, name] : {std::pair{ssm::ScanAlgo::sequential, "selective_scan_sequential"},
                            {ssm::ScanAlgo::parallel, "selective_scan_parallel"}})
    c.push_back(op_case(name, 7, scan_in, [algo](const Inputs& v) {
      return ssm::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], algo);
    }));
  c.push_back(op_case("selective_ssm", 8,
                      [](Rng& r) {
                        Inputs in = rt(r, {{5, 4}, {4, 8}, {2, 4}, {4}});
                        in.push_back(uniform_tensor({4, 3}, r, -0.5, 0.5));
                        in.push_back(uniform_tensor({4}, r));
                        return in;
                      },
                      [](const Inputs& v) {
                        ssm::SelectiveSsmWeights w{v[1], v[2], v[3], v[4], v[5]};
                        return ssm::selective_ssm(v[0], w);
                      }));

  // olm_forward on a 1x8x4 input, with respect to the input and to every weight.
  c.push_back({"olm_forward_input", [] {
                 const auto cfg = toy_olm(true);
                 Rng init(9);
                 const auto w = OlmWeights::init(cfg, init);
                 return gradcheck(
                     [&](const Inputs& v) {
                       Rng r(33);
                       return olm_forward(TokenSequence{v[0]}, cfg, w.blocks[0], r).values;
                     },
                     {uniform_tensor({1, 8, 4}, init)}, init);
               }});
  c.push_back({"olm_parameters", [] {
                 const auto cfg = toy_olm(true);
                 Rng init(9);
                 const auto w = OlmWeights::init(cfg, init);
                 ParameterList params;
                 w.append_parameters(params);
                 const Tensor x = uniform_tensor({1, 8, 4}, init);
                 const Tensor mix = uniform_tensor({1, 8, 4}, init);
                 Rng rng(10);
                 return gradcheck_params(
                            params,
                            [&] {
                              Rng r(33);
                              return sum(mul(olm_stack(TokenSequence{x}, cfg, w, r).values, mix));
                            },
                            rng)
                     .second;
               }});
  c.push_back({"gdg_parameters", [] {
                 const VladConfig cfg{3, 4, 6, 5};
                 Rng init(11);
                 const auto w = GdgWeights::init(cfg, init);
                 ParameterList params;
                 w.append_parameters(params);
                 const Tensor s = uniform_tensor({7, 4}, init);
                 const Tensor mix = uniform_tensor({5}, init);
                 Rng rng(12);
                 return gradcheck_params(
                            params, [&] { return sum(mul(gdg_descriptor(s, cfg, w), mix)); }, rng)
                     .second;
               }});

  const auto loss_in = [](Rng& r) { return rt(r, {{4}, {4}, {4}, {4}, {4}}); };
  c.push_back(op_case("imtrihard_loss", 13, loss_in, [](const Inputs& v) {
    LossConfig lc;
    lc.clamp_at_zero = false;
    const std::vector<Tensor> p{v[1], v[2]}, n{v[3], v[4]};
    return imtrihard_loss(v[0], p, n, lc);
  }));
  c.push_back(op_case("triplet_loss", 13, loss_in, [](const Inputs& v) {
    LossConfig lc;
    lc.kind = LossKind::triplet;
    lc.alpha = 10.0;  // keeps every hinge active
    const std::vector<Tensor> p{v[1], v[2]}, n{v[3], v[4]};
    Rng r(5);
    return triplet_loss(v[0], p, n, lc, r);
  }));

  c.push_back({"pipeline_parameters", [] {
                 auto cfg = PipelineConfig::toy();
                 cfg.backbone.stages = {{3, 3, 2}, {4, 3, 2}, {4, 3, 2}};
                 cfg.projection.width = 12;
                 cfg.olm.d_model = 4;
                 cfg.olm.expand = 6;
                 cfg.olm.state = 3;
                 cfg.vlad = VladConfig{2, 4, 5, 6};
                 Pipeline model(cfg);
                 Rng init(14);
                 const Tensor input = uniform_tensor({1, cfg.projection.height, 12}, init, 0.0, 1.0);
                 const Tensor mix = uniform_tensor({6}, init);
                 Rng rng(15);
                 return gradcheck_params(
                            model.parameters(),
                            [&] {
                              Rng r(77);
                              return sum(mul(model.descriptor(input, r, true), mix));
                            },
                            rng, 8)
                     .second;
               }});
  return c;
}

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult lti_duality() {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t e = 1 + uniform_index(rng, 4), n = 1 + uniform_index(rng, 8),
                      m = 1 + uniform_index(rng, 64);
    const Tensor delta({1, m, e}, uniform(rng, 0.01, 1.0));
    const Tensor a = uniform_tensor({e, n}, rng, -3.0, -0.01);
    const Tensor b = uniform_tensor({n}, rng), c = uniform_tensor({n}, rng);
    const Tensor d = uniform_tensor({e}, rng), x = uniform_tensor({1, m, e}, rng);
    const auto mode = trial % 2 ? ssm::Discretization::zoh : ssm::Discretization::euler;
    const auto dssm = ssm::discretize(delta, a, b, mode);
    const Tensor rec = ssm::scan_sequential(dssm, c, d, x);
    const Tensor conv = ssm::causal_conv(reshape(x, {m, e}), ssm::lti_kernel(dssm, c, m), d);
    worst = std::max(worst, max_abs_diff(rec, conv));
  }
  return {"lti_recurrence_vs_kernel", worst < 1e-10, "max diff " + fmt(worst)};
}

CheckResult scan_equivalence() {
  Rng rng(102);
  double worst = 0.0;
  for (std::size_t m : {1u, 7u, 64u, 300u}) {
    const std::size_t e = 3, n = 4;
    const auto dssm = ssm::discretize(uniform_tensor({1, m, e}, rng, 0.01, 1.0),
                                      uniform_tensor({e, n}, rng, -2.0, -0.05),
                                      uniform_tensor({1, m, n}, rng), ssm::Discretization::euler);
    const Tensor c = uniform_tensor({1, m, n}, rng), d = uniform_tensor({e}, rng);
    const Tensor x = uniform_tensor({1, m, e}, rng);
    worst = std::max(worst, max_abs_diff(ssm::scan_sequential(dssm, c, d, x),
                                         ssm::scan_parallel(dssm, c, d, x, 3)));
  }
  return {"parallel_scan_vs_sequential", worst < 1e-10, "max diff " + fmt(worst)};
}

CheckResult gradients() {
  double worst = 0.0;
  std::string name;
  for (const auto& gc : gradient_cases()) {
    const double err = gc.run();
    if (!(err <= worst)) {
      worst = err;
      name = gc.name;
    }
  }
  return {"gradients", worst < 1e-4, "worst " + name + " rel err " + fmt(worst)};
}

CheckResult backbone_shift() {
  Rng rng(103);
  BackboneConfig cfg;
  cfg.stages = {{4, 3, 2}, {6, 3, 2}, {8, 3, 1}};
  auto w = BackboneWeights::init(cfg, rng);
  for (auto& b : w.conv_bias)
    for (auto& v : b.mutable_data()) v = normal(rng);
  const std::size_t width = 24, d = cfg.channels();
  const Tensor img = uniform_tensor({1, 16, width}, rng, 0.0, 1.0);
  const Tensor base = backbone_forward(img, cfg, w).values;
  double worst = 0.0;
  for (std::size_t s : {1u, 6u, 12u, 17u}) {
    const Tensor shifted = backbone_forward(shift_columns(img, s), cfg, w).values;
    Tensor expect({1, width, d});
    for (std::size_t m = 0; m < width; ++m)
      for (std::size_t c = 0; c < d; ++c)
        expect.mutable_data()[m * d + c] = base[((m + s) % width) * d + c];
    worst = std::max(worst, max_abs_diff(shifted, expect));
  }
  return {"backbone_column_shift", worst < 1e-12, "max diff " + fmt(worst)};
}

CheckResult descriptor_shift() {
  Rng rng(104);
  const VladConfig cfg{4, 6, 10, 8};
  const auto w = GdgWeights::init(cfg, rng);
  const Tensor seq = uniform_tensor({16, 6}, rng, -2, 2);
  const Tensor base = gdg_descriptor(seq, cfg, w);
  bool exact = true;
  for (std::size_t s : {1u, 4u, 8u, 13u}) exact = exact && max_abs_diff(gdg_descriptor(shift(seq, s), cfg, w), base) == 0.0;
  return {"descriptor_shift_invariance", exact, exact ? "bit-identical" : "differs"};
}

CheckResult loss_values() {
  auto v1 = [](double x) { return Tensor({1}, std::vector<double>{x}); };
  const Tensor q = v1(0);
  const std::vector<Tensor> p{v1(1), v1(2)}, n{v1(std::sqrt(2.0)), v1(std::sqrt(3.0))};
  const double im = imtrihard_loss(q, p, n, LossConfig{}).item();
  LossConfig tc;
  tc.alpha = 0.3;
  Rng rng(105);
  const std::vector<Tensor> p2{v1(2)}, n1{v1(1)};
  const double tr = triplet_loss(q, p2, n1, tc, rng).item();
  const auto mined = mine_hardest(std::vector<double>{0.2, 0.9, 0.5}, std::vector<double>{1.5, 0.4, 2.0});
  const double err = std::max(std::fabs(im - 4.50025), std::fabs(tr - 3.3));
  return {"loss_values", err < 1e-12 && mined == std::pair<std::size_t, std::size_t>{1, 1},
          "imtrihard " + fmt(im) + ", triplet " + fmt(tr)};
}

CheckResult retrieval_metrics() {
  const std::vector<ScoredPair> scores{{0.9, true}, {0.8, false}, {0.7, true}};
  const auto pr = pr_metrics(scores);
  const auto r1 = recall_at({{1, 2}, {3, 4}}, {{2}, {5}}, 1);
  const auto r2 = recall_at({{1, 2}, {3, 4}}, {{2}, {5}}, 2);
  const bool ok = std::fabs(pr.f1max - 0.8) < 1e-12 && std::fabs(pr.auc - 19.0 / 24.0) < 1e-12 &&
                  r1.recall == 0.0 && r2.recall == 0.5;
  return {"retrieval_metrics", ok, "f1max " + fmt(pr.f1max) + ", auc " + fmt(pr.auc)};
}

CheckResult overlap_identity() {
  synth::WorldSpec spec;
  spec.places = 2;
  const auto scenes = synth::generate_scenes(spec);
  Rng rng(spec.seed);
  const Pose pose = synth::jittered_pose(spec, scenes[0], rng);
  const PointCloud pc = synth::render_scan(scenes[0], pose, spec.sensor, spec.range_noise, 1);
  const double ov = compute_overlap(build_range_image(pc, spec.sensor), pose, pc, pose);
  return {"overlap_identity", ov == 1.0 && !pc.points.empty(), "overlap " + fmt(ov)};
}

CheckResult determinism() {
  auto cfg = PipelineConfig::toy();
  cfg.projection.width = 12;
  cfg.init_seed = 106;
  Rng rng(107);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 6; ++i) inputs.push_back(uniform_tensor({1, 16, 12}, rng, 0, 1));
  const std::vector<TrainingTuple> tuples{{0, {1}, {2, 3}}, {3, {4}, {0, 5}}, {5, {2}, {1, 4}}};
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 1;
  tc.val_fraction = 0.0;
  auto run = [&] {
    Pipeline p(cfg);
    train(p, inputs, tuples, tc);
    return p.embed_input(inputs[0], 0).values;
  };
  const bool same = run() == run();
  return {"train_embed_determinism", same, same ? "identical" : "outputs differ"};
}

}  // namespace

std::vector<CheckResult> run_selfcheck() {
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks{
      {"lti_recurrence_vs_kernel", lti_duality},
      {"parallel_scan_vs_sequential", scan_equivalence},
      {"gradients", gradients},
      {"backbone_column_shift", backbone_shift},
      {"descriptor_shift_invariance", descriptor_shift},
      {"loss_values", loss_values},
      {"retrieval_metrics", retrieval_metrics},
      {"overlap_identity", overlap_identity},
      {"train_embed_determinism", determinism},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace rvm
