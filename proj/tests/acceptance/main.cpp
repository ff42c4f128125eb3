#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rvm/backbone.hpp"
#include "rvm/bench.hpp"
#include "rvm/gdg.hpp"
#include "rvm/gradcheck.hpp"
#include "rvm/ops.hpp"
#include "rvm/pipeline.hpp"
#include "rvm/rangeview.hpp"
#include "rvm/retrieval.hpp"
#include "rvm/selfcheck.hpp"
#include "rvm/ssm.hpp"
#include "rvm/synth.hpp"
#include "rvm/training.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace rvm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Outcome lti_duality() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
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
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 5.0, "max diff " + num(worst) + ", " + num(secs) + " s"};
}

Outcome scan_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst = 0.0;
  for (std::size_t m : {1u, 7u, 64u, 900u}) {
    const std::size_t batch = 2, e = 4, n = 8;
    const auto dssm = ssm::discretize(uniform_tensor({batch, m, e}, rng, 0.01, 1.0),
                                      uniform_tensor({e, n}, rng, -2.0, -0.05),
                                      uniform_tensor({batch, m, n}, rng), ssm::Discretization::euler);
    const Tensor c = uniform_tensor({batch, m, n}, rng), d = uniform_tensor({e}, rng);
    const Tensor x = uniform_tensor({batch, m, e}, rng);
    const Tensor ys = ssm::scan_sequential(dssm, c, d, x);
    for (unsigned threads : {1u, 4u})
      worst = std::max(worst, max_abs_diff(ys, ssm::scan_parallel(dssm, c, d, x, threads)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 5.0, "max diff " + num(worst) + ", " + num(secs) + " s"};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t count = 0;
  for (const auto& gc : gradient_cases()) {
    const double err = gc.run();
    ++count;
    if (!(err <= worst)) {
      worst = err;
      worst_name = gc.name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, std::to_string(count) + " cases, worst " + worst_name +
                                           " rel err " + num(worst) + ", " + num(secs) + " s"};
}

Tensor roll_sequence(const Tensor& seq, std::size_t s) {
  const std::size_t m = seq.dim(seq.ndim() - 2), d = seq.dim(seq.ndim() - 1);
  Tensor out(seq.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) out.mutable_data()[i * d + c] = seq[((i + s) % m) * d + c];
  return out;
}

Outcome yaw_properties() {
  const auto kitti = PipelineConfig::kitti();
  const std::size_t w = kitti.projection.width;
  const std::vector<std::size_t> shifts{1, w / 4, w / 2};
  Rng rng(4);
  const Tensor img = uniform_tensor({1, kitti.projection.height, w}, rng, 0.0, 1.0);

  double backbone_worst = 0.0;
  for (auto mode : {SppMode::concat, SppMode::add}) {
    BackboneConfig cfg = kitti.backbone;
    cfg.spp.mode = mode;
    auto weights = BackboneWeights::init(cfg, rng);
    for (auto& b : weights.conv_bias)
      for (auto& v : b.mutable_data()) v = normal(rng);
    const Tensor base = backbone_forward(img, cfg, weights).values;
    for (std::size_t s : shifts)
      backbone_worst = std::max(
          backbone_worst,
          max_abs_diff(backbone_forward(shift_columns(img, s), cfg, weights).values,
                       roll_sequence(base, s)));
  }

  const auto gw = GdgWeights::init(kitti.vlad, rng);
  const Tensor seq = uniform_tensor({w, kitti.vlad.input_dim}, rng, -2.0, 2.0);
  const auto gbase = gdg_forward(seq, kitti.vlad, gw, 0).values;
  bool gdg_exact = true;
  for (std::size_t s : shifts) gdg_exact = gdg_exact && gdg_forward(shift(seq, s), kitti.vlad, gw, 0).values == gbase;

  auto bypass = kitti;
  bypass.bypass_olm = true;
  bypass.init_seed = 4;
  const Pipeline model(bypass);
  const auto pbase = model.embed_input(img, 0).values;
  double pipe_worst = 0.0;
  for (std::size_t s : shifts)
    pipe_worst = std::max(pipe_worst, max_abs_diff(model.embed_input(shift_columns(img, s), 0).values, pbase));

  const bool pass = backbone_worst < 1e-12 && gdg_exact && pipe_worst < 1e-9;
  return {pass, "(a) backbone+SPP max diff " + num(backbone_worst) + " (b) descriptor head " +
                    (gdg_exact ? "bit-identical" : "differs") + " (c) bypassed pipeline max diff " +
                    num(pipe_worst)};
}

Tensor v1(double x) { return Tensor({1}, std::vector<double>{x}); }

Outcome loss_correctness() {
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::fabs(got - want)); };
  const Tensor q = v1(0);
  const std::vector<Tensor> p{v1(1), v1(2)};
  const std::vector<Tensor> n{v1(std::sqrt(2.0)), v1(std::sqrt(3.0))};
  LossConfig lc;
  check(imtrihard_loss(q, p, n, lc).item(), 1e-4 * 2.5 + 2 * (0.25 + 4.0) - 2 * 2.0);
  const std::vector<Tensor> far{v1(10), v1(11)};
  check(imtrihard_loss(q, p, far, lc).item(), 0.0);
  LossConfig raw = lc;
  raw.clamp_at_zero = false;
  check(imtrihard_loss(q, p, far, raw).item(), 0.00025 + 8.5 - 200.0);

  LossConfig tc;
  tc.alpha = 0.3;
  Rng rng(5);
  const std::vector<Tensor> p1{v1(1)}, p2{v1(2)}, n1{v1(1)}, n2{v1(2)};
  check(triplet_loss(q, p1, n2, tc, rng).item(), 0.0);
  check(triplet_loss(q, p2, n1, tc, rng).item(), 3.3);
  const std::vector<Tensor> same{v1(1), v1(-1), v1(1)}, two{v1(1), v1(-1)};
  check(triplet_loss(q, same, same, tc, rng).item(), 0.9);
  check(triplet_loss(q, same, two, tc, rng).item(), 0.6);

  std::size_t mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> pos(1 + uniform_index(rng, 12)), neg(1 + uniform_index(rng, 12));
    // Coarse values so ties occur.
    for (auto& v : pos) v = double(uniform_index(rng, 6));
    for (auto& v : neg) v = double(uniform_index(rng, 6));
    mismatches += mine_hardest(pos, neg) != oracle::hardest(pos, neg);
  }
  return {worst < 1e-12 && mismatches == 0,
          "max hand-value error " + num(worst) + ", mining mismatches " + std::to_string(mismatches) + "/100"};
}

struct SynthData {
  synth::WorldSpec spec;
  synth::World world;
  std::vector<RangeImage> images;
  std::vector<Tensor> inputs;
  std::vector<OverlapLabel> labels;
};

SynthData default_world_data() {
  SynthData d;
  d.world = synth::generate_world(d.spec);
  for (const auto& s : d.world.scans) {
    d.images.push_back(build_range_image(s, d.spec.sensor));
    d.inputs.push_back(to_network_input(d.images.back()));
  }
  d.labels = pairwise_overlaps(d.images, d.world.scans, d.world.poses);
  return d;
}

std::vector<GlobalDescriptor> embed_all(const Pipeline& model, const std::vector<Tensor>& inputs) {
  std::vector<GlobalDescriptor> out;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out.push_back(model.embed_input(inputs[i], static_cast<std::uint32_t>(i)));
  return out;
}

TrainConfig overfit_config(LossKind kind) {
  TrainConfig tc;
  tc.loss.kind = kind;
  tc.lr = 3e-4;
  tc.epochs = 100;
  tc.max_steps = 200;
  return tc;
}

// First epoch whose validation F1max reaches `target`, or 0 when none does.
std::size_t first_epoch_reaching(const TrainingReport& r, double target) {
  for (const auto& e : r.epochs)
    if (e.val_f1max >= target) return e.epoch;
  return 0;
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const SynthData data = default_world_data();
  const auto tuples = build_tuples(data.labels, 0.3, data.inputs.size(), data.inputs.size(), 0);

  Pipeline model(PipelineConfig::toy());
  const auto report = train(model, data.inputs, tuples, overfit_config(LossKind::imtrihard));
  const double r1 = nearest_neighbor_recall(embed_all(model, data.inputs), data.world.place_ids);

  const auto visits = synth::extra_visits(data.spec, data.world.scenes,
                                          {0.0, 0.0, std::numbers::pi}, data.spec.seed + 99);
  const auto held = synth::render_world(data.spec, data.world.scenes, visits, data.world.scans.size());
  std::vector<RangeImage> himg;
  DescriptorDb db(model.config().vlad.output_dim);
  for (std::size_t i = 0; i < held.scans.size(); ++i) {
    himg.push_back(build_range_image(held.scans[i], data.spec.sensor));
    db.add(model.embed(himg.back(), static_cast<std::uint32_t>(i)));
  }
  EvalProtocol protocol;
  protocol.exclusion_window = 10;
  const auto lc = eval_loop_closure(db, pairwise_overlaps(himg, held.scans, held.poses), protocol);
  const double auc = lc.pr ? lc.pr->auc : std::nan("");
  const double overfit_secs = seconds_since(t0);

  auto trend_cfg = [](LossKind kind) {
    TrainConfig tc = overfit_config(kind);
    tc.epochs = 10;
    tc.max_steps = 0;
    return tc;
  };
  Pipeline trip_model(PipelineConfig::toy()), imtri_model(PipelineConfig::toy());
  const auto trip = train(trip_model, data.inputs, tuples, trend_cfg(LossKind::triplet));
  const auto imtri = train(imtri_model, data.inputs, tuples, trend_cfg(LossKind::imtrihard));
  double best = 0.0;
  for (const auto& e : trip.epochs) best = std::max(best, e.val_f1max);
  const std::size_t trip_epoch = first_epoch_reaching(trip, best);
  const std::size_t imtri_epoch = first_epoch_reaching(imtri, best);
  const bool trend = imtri_epoch != 0 && imtri_epoch < trip_epoch;

  std::ostringstream os;
  os << "steps " << report.steps << ", train R@1 " << num(r1) << ", held-out AUC " << num(auc)
     << " (" << lc.queries_with_loops << " loop queries), " << num(overfit_secs)
     << " s; trend: triplet best val F1max " << num(best) << " at epoch " << trip_epoch
     << ", imtrihard reaches it at epoch ";
  if (imtri_epoch) os << imtri_epoch;
  else os << "never";
  os << (trend ? " (earlier)" : " (not earlier)");
  const bool pass = r1 == 1.0 && auc >= 0.95 && overfit_secs < 900.0 && trend;
  return {pass, os.str()};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(7);
  std::size_t pr_bad = 0, recall_bad = 0, search_bad = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<ScoredPair> scores(2 + uniform_index(rng, 40));
    for (auto& s : scores) {
      s.similarity = double(uniform_index(rng, 10)) / 10.0;
      s.positive = uniform_index(rng, 2) == 1;
    }
    scores[0].positive = true;
    scores[1].positive = false;
    const auto got = pr_metrics(scores);
    const auto want = oracle::pr_metrics(scores);
    pr_bad += got.auc != want.auc || got.f1max != want.f1max;
  }
  for (int t = 0; t < 200; ++t) {
    const std::size_t queries = 1 + uniform_index(rng, 10), ids = 2 + uniform_index(rng, 20);
    std::vector<std::vector<std::uint32_t>> ranked(queries), truth(queries);
    for (std::size_t q = 0; q < queries; ++q) {
      for (std::size_t r = 0; r < ids; ++r) ranked[q].push_back(static_cast<std::uint32_t>(r));
      shuffle(std::span(ranked[q]), rng);
      const std::size_t g = uniform_index(rng, 4);
      for (std::size_t i = 0; i < g; ++i) truth[q].push_back(static_cast<std::uint32_t>(uniform_index(rng, ids)));
    }
    const std::size_t n = 1 + uniform_index(rng, 5);
    const double got = recall_at(ranked, truth, n).recall;
    const double want = oracle::recall_at(ranked, truth, n);
    recall_bad += !(got == want || (std::isnan(got) && std::isnan(want)));
  }
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 1 + uniform_index(rng, 8), size = 1 + uniform_index(rng, 50);
    DescriptorDb db(dim);
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < size; ++i) {
      // Coarse coordinates produce distance ties.
      for (auto& x : v) x = double(uniform_index(rng, 3));
      db.add(static_cast<std::uint32_t>(1000 - i), v);
    }
    for (auto& x : v) x = double(uniform_index(rng, 3));
    const std::size_t k = 1 + uniform_index(rng, size + 2);
    const auto got = db_search(db, v, k);
    const auto want = oracle::search(db, v, k);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].id == want[i].id && got[i].distance == want[i].distance;
    search_bad += !same;
  }
  const double secs = seconds_since(t0);
  return {pr_bad + recall_bad + search_bad == 0 && secs < 10.0,
          "mismatches pr " + std::to_string(pr_bad) + "/200, recall " + std::to_string(recall_bad) +
              "/200, search " + std::to_string(search_bad) + "/200, " + num(secs) + " s"};
}

Outcome overlap_oracle() {
  const synth::WorldSpec spec;
  const auto world = synth::generate_world(spec);
  std::vector<RangeImage> images;
  for (const auto& s : world.scans) images.push_back(build_range_image(s, spec.sensor));
  Rng rng(8);
  std::size_t mismatches = 0, identity_bad = 0, same_place = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t i = uniform_index(rng, images.size());
    // Half of the pairs are revisits of the same place.
    std::size_t j = uniform_index(rng, images.size());
    if (t % 2 == 0) j = (i + spec.places * (1 + uniform_index(rng, spec.revisits - 1))) % images.size();
    same_place += world.place_ids[i] == world.place_ids[j];
    const double got = compute_overlap(images[i], world.poses[i], world.scans[j], world.poses[j], 0.05);
    mismatches += got != oracle::overlap(images[i], world.poses[i], world.scans[j], world.poses[j], 0.05);
    identity_bad += compute_overlap(images[i], world.poses[i], world.scans[i], world.poses[i]) != 1.0;
  }
  return {mismatches == 0 && identity_bad == 0,
          "oracle mismatches " + std::to_string(mismatches) + "/20 (" + std::to_string(same_place) +
              " same-place), identity pairs not 1.0: " + std::to_string(identity_bad)};
}

int shell(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome cli_determinism() {
  rvm::testing::TempDir dir;
  const fs::path p = dir.path();
  const std::string cli = RVM_CLI_PATH;
  {
    std::ofstream(p / "model.cfg") << "preset=toy\nlr=3e-4\nepochs=2\nmax_steps=6\nseed=3\n";
  }
  const std::string q = "\"";
  auto path = [&](const char* name) { return q + (p / name).string() + q; };
  int rc = shell(cli + " synth --out " + path("world"));
  rc |= shell(cli + " project --scans " + path("world") + " --config " + path("model.cfg") +
              " --out " + path("world/ranges"));
  rc |= shell(cli + " overlaps --scans " + path("world") + " --poses " + path("world/poses.txt") +
              " --config " + path("model.cfg") + " --out " + path("labels.txt"));
  for (const char* run : {"a", "b"}) {
    const std::string ck = std::string("ck_") + run;
    rc |= shell(cli + " train --config " + path("model.cfg") + " --data " + path("world") +
                " --labels " + path("labels.txt") + " --out " + path(ck.c_str()));
    rc |= shell(cli + " embed --ckpt " + path((ck + "/model.omck").c_str()) + " --ranges " +
                path("world/ranges") + " --out " + path((ck + "/db.omdb").c_str()));
  }
  if (rc != 0) return {false, "a pipeline command failed"};
  using rvm::testing::read_bytes;
  const auto ca = read_bytes(p / "ck_a/model.omck"), cb = read_bytes(p / "ck_b/model.omck");
  const auto da = read_bytes(p / "ck_a/db.omdb"), db = read_bytes(p / "ck_b/db.omdb");
  const bool ckpt_same = !ca.empty() && ca == cb;
  const bool db_same = !da.empty() && da == db;
  const int self = shell(cli + " selfcheck");
  return {ckpt_same && db_same && self == 0,
          std::string("checkpoints ") + (ckpt_same ? "identical" : "differ") + ", descriptor dbs " +
              (db_same ? "identical" : "differ") + ", selfcheck exit " + std::to_string(self)};
}

Outcome throughput() {
  const Pipeline model(PipelineConfig::kitti());
  BenchConfig bc;
  bc.reps = 5;
  const auto report = bench(model, bc);
  std::ostringstream os;
  os << "informational:";
  bool complete = true;
  for (const char* name : {"descriptor_extraction", "db_search", "scan_sequential", "scan_parallel"}) {
    const auto* row = report.find(name);
    complete = complete && row && std::isfinite(row->median_ms);
    if (row) os << ' ' << name << " median " << num(row->median_ms) << " ms;";
  }
  os << " scan speedup at M=900 " << num(report.scan_speedup()) << "x with " << bc.threads << " threads";
  return {complete, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("criteria", only, "Criterion numbers to run (all when omitted)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"ssm duality", lti_duality},
      {"scan equivalence", scan_equivalence},
      {"gradient suite", gradient_suite},
      {"exact yaw properties", yaw_properties},
      {"loss correctness", loss_correctness},
      {"end-to-end overfit", end_to_end},
      {"metric oracles", metric_oracles},
      {"overlap oracle", overlap_oracle},
      {"determinism", cli_determinism},
      {"throughput report", throughput},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ' ' << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
