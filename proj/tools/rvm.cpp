#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rvm/bench.hpp"
#include "rvm/error.hpp"
#include "rvm/pipeline.hpp"
#include "rvm/rangeview.hpp"
#include "rvm/retrieval.hpp"
#include "rvm/selfcheck.hpp"
#include "rvm/synth.hpp"
#include "rvm/training.hpp"

namespace fs = std::filesystem;
using namespace rvm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitContract = 2;
constexpr int kExitDegenerate = 3;

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  f << text;
}

// Numeric file stems are used as scan ids; anything else falls back to the
// position in sorted order.
std::uint32_t scan_id(const fs::path& file, std::size_t index) {
  const std::string stem = file.stem().string();
  if (!stem.empty() && stem.find_first_not_of("0123456789") == std::string::npos && stem.size() < 10)
    return static_cast<std::uint32_t>(std::stoul(stem));
  return static_cast<std::uint32_t>(index);
}

std::vector<fs::path> scan_files(const fs::path& dir) {
  auto files = list_files(dir, ".bin");
  if (files.empty() && fs::is_directory(dir / "scans")) files = list_files(dir / "scans", ".bin");
  return files;
}

std::vector<fs::path> range_files(const fs::path& dir) {
  auto files = list_files(dir, ".omrv");
  if (files.empty() && fs::is_directory(dir / "ranges")) files = list_files(dir / "ranges", ".omrv");
  return files;
}

std::vector<RangeImage> load_images(const fs::path& dir, const ProjectionConfig& proj) {
  std::vector<RangeImage> images;
  if (const auto ranges = range_files(dir); !ranges.empty()) {
    for (const auto& f : ranges) images.push_back(read_range_image(f, &proj));
    return images;
  }
  const auto scans = scan_files(dir);
  if (scans.empty()) throw IoError("no .omrv or .bin files under " + dir.string());
  for (const auto& f : scans) images.push_back(build_range_image(read_scan(f), proj));
  return images;
}

fs::path sidecar_config(const fs::path& ckpt) { return ckpt.parent_path() / "pipeline.cfg"; }

int run_synth(const std::string& spec_path, const std::string& out) {
  const auto spec = spec_path.empty() ? synth::WorldSpec{} : synth::WorldSpec::load(spec_path);
  const auto world = synth::generate_world(spec);
  synth::write_world(world, out);
  std::cout << "wrote " << world.scans.size() << " scans of " << spec.places << " places to "
            << out << "\n";
  return kExitOk;
}

int run_project(const std::string& scans, const std::string& config, const std::string& out) {
  const auto cfg = PipelineConfig::load(config);
  const auto files = scan_files(scans);
  if (files.empty()) throw IoError("no .bin files under " + scans);
  fs::create_directories(out);
  for (const auto& f : files)
    write_range_image(fs::path(out) / (f.stem().string() + ".omrv"),
                      build_range_image(read_scan(f), cfg.projection));
  std::cout << "projected " << files.size() << " scans\n";
  return kExitOk;
}

int run_overlaps(const std::string& scans, const std::string& poses_path, const std::string& config,
                 const std::string& out) {
  const auto cfg = PipelineConfig::load(config);
  const auto files = scan_files(scans);
  const auto poses = read_poses(poses_path);
  std::vector<PointCloud> clouds;
  std::vector<RangeImage> images;
  for (const auto& f : files) {
    clouds.push_back(read_scan(f));
    images.push_back(build_range_image(clouds.back(), cfg.projection));
  }
  const auto labels = pairwise_overlaps(images, clouds, poses);
  write_labels(out, labels);
  std::cout << "wrote " << labels.size() << " overlap labels\n";
  return kExitOk;
}

int run_train(const std::string& config, const std::string& data, const std::string& labels_path,
              const std::string& out) {
  const auto kv = KeyValues::load(config);
  const auto pcfg = PipelineConfig::from_keys(kv);
  const auto tcfg = TrainConfig::from_keys(kv);
  std::vector<Tensor> inputs;
  for (const auto& img : load_images(data, pcfg.projection)) inputs.push_back(to_network_input(img));
  const auto labels = read_labels(labels_path);
  const auto tuples = build_tuples(labels, tcfg.overlap_threshold, inputs.size(), inputs.size(),
                                   tcfg.seed);
  Pipeline model(pcfg);
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochReport& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " val_f1max " << e.val_f1max
              << "\n";
    return true;
  };
  const auto report = train(model, inputs, tuples, tcfg, fs::path(out), hooks);
  std::cout << report.to_csv();
  return kExitOk;
}

int run_embed(const std::string& ckpt, const std::string& config, const std::string& ranges,
              const std::string& out) {
  const auto cfg = PipelineConfig::load(config.empty() ? sidecar_config(ckpt) : fs::path(config));
  Pipeline model(cfg);
  model.load(ckpt);
  const auto files = range_files(ranges);
  if (files.empty()) throw IoError("no .omrv files under " + ranges);
  DescriptorDb db(cfg.vlad.output_dim);
  for (std::size_t i = 0; i < files.size(); ++i)
    db.add(model.embed(read_range_image(files[i], &cfg.projection), scan_id(files[i], i)));
  db.save(out);
  std::cout << "embedded " << db.size() << " scans\n";
  return kExitOk;
}

int run_search(const std::string& db_path, const std::string& query_path, std::size_t k,
               const std::string& out) {
  const auto db = DescriptorDb::load(db_path);
  const auto queries = DescriptorDb::load(query_path);
  std::ostringstream os;
  os << std::setprecision(17) << "query,rank,id,distance\n";
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto hits = db_search(db, queries.values(q), k);
    for (std::size_t r = 0; r < hits.size(); ++r)
      os << queries.id(q) << ',' << r + 1 << ',' << hits[r].id << ',' << hits[r].distance << "\n";
  }
  emit(os.str(), out);
  return kExitOk;
}

int run_eval_loop(const std::string& db_path, const std::string& poses_path,
                  const std::string& labels_path, const std::string& protocol_path,
                  const std::string& out) {
  const auto db = DescriptorDb::load(db_path);
  const auto protocol = protocol_path.empty() ? EvalProtocol{} : EvalProtocol::load(protocol_path);
  std::vector<Pose> poses;
  if (!poses_path.empty()) poses = read_poses(poses_path);
  const auto report = eval_loop_closure(db, read_labels(labels_path), protocol,
                                        poses_path.empty() ? nullptr : &poses);
  emit(report.to_csv(), out);
  return report.degenerate() ? kExitDegenerate : kExitOk;
}

int run_eval_place(const std::string& db_path, const std::string& query_path,
                   const std::string& poses_a, const std::string& poses_b,
                   const std::string& protocol_path, const std::string& out) {
  const auto protocol = protocol_path.empty() ? EvalProtocol::place_recognition_defaults()
                                              : EvalProtocol::load(protocol_path);
  const auto report =
      eval_place_recognition(DescriptorDb::load(db_path), DescriptorDb::load(query_path),
                             read_poses(poses_a), read_poses(poses_b), protocol);
  emit(report.to_csv(), out);
  return report.degenerate() ? kExitDegenerate : kExitOk;
}

int run_selfcheck_cmd() {
  bool ok = true;
  for (const auto& r : rvm::run_selfcheck()) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitFailure;
}

int run_bench(const std::string& ckpt, const std::string& preset, const BenchConfig& bc,
              const std::string& out) {
  PipelineConfig cfg;
  if (!ckpt.empty()) {
    cfg = PipelineConfig::load(sidecar_config(ckpt));
  } else {
    cfg = PipelineConfig::from_keys(KeyValues::parse("preset=" + preset + "\n"));
  }
  Pipeline model(cfg);
  if (!ckpt.empty()) model.load(ckpt);
  const auto report = bench(model, bc);
  std::ostringstream os;
  os << report.to_csv();
  emit(os.str(), out);
  std::cerr << "scan speedup (sequential / parallel, M=" << bc.scan_length
            << "): " << report.scan_speedup() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Range-view LiDAR place recognition toolkit"};
  app.require_subcommand(1);
  std::string a, b, c, d, e, out;
  std::size_t k = 10;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  synth->add_option("--spec", a, "World spec file (defaults when omitted)");
  synth->add_option("--out", out, "Output directory")->required();

  auto* project = app.add_subcommand("project", "Project scans to OMRV range images");
  project->add_option("--scans", a, "Directory of .bin scans")->required();
  project->add_option("--config", b, "Pipeline config")->required();
  project->add_option("--out", out, "Output directory")->required();

  auto* overlaps = app.add_subcommand("overlaps", "Compute pairwise overlap labels");
  overlaps->add_option("--scans", a, "Directory of .bin scans")->required();
  overlaps->add_option("--poses", b, "Pose file")->required();
  overlaps->add_option("--config", c, "Pipeline config")->required();
  overlaps->add_option("--out", out, "Label file")->required();

  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--config", a, "Pipeline and training keys")->required();
  trainc->add_option("--data", b, "Directory of .omrv or .bin files")->required();
  trainc->add_option("--labels", c, "Overlap label file")->required();
  trainc->add_option("--out", out, "Checkpoint directory")->required();

  auto* embed = app.add_subcommand("embed", "Compute a descriptor database");
  embed->add_option("--ckpt", a, "Checkpoint (pipeline.cfg is read next to it)")->required();
  embed->add_option("--config", b, "Pipeline config overriding the sidecar");
  embed->add_option("--ranges", c, "Directory of .omrv files")->required();
  embed->add_option("--out", out, "Output .omdb")->required();

  auto* search = app.add_subcommand("search", "k nearest database entries per query");
  search->add_option("--db", a, "Database .omdb")->required();
  search->add_option("--query", b, "Query .omdb")->required();
  search->add_option("--k", k, "Neighbours per query");
  search->add_option("--out", out, "CSV output (stdout when omitted)");

  auto* eval_loop = app.add_subcommand("eval-loop", "Loop-closure evaluation");
  eval_loop->add_option("--db", a, "Descriptor database")->required();
  eval_loop->add_option("--poses", b, "Pose file");
  eval_loop->add_option("--labels", c, "Overlap label file")->required();
  eval_loop->add_option("--protocol", d, "Protocol file");
  eval_loop->add_option("--out", out, "CSV output (stdout when omitted)");

  auto* eval_place = app.add_subcommand("eval-place", "Cross-session place recognition");
  eval_place->add_option("--db", a, "Database descriptors")->required();
  eval_place->add_option("--query-db", b, "Query descriptors")->required();
  eval_place->add_option("--poses-a", c, "Database poses")->required();
  eval_place->add_option("--poses-b", d, "Query poses")->required();
  eval_place->add_option("--protocol", e, "Protocol file");
  eval_place->add_option("--out", out, "CSV output (stdout when omitted)");

  app.add_subcommand("selfcheck", "Run the built-in invariant checks");

  BenchConfig bc;
  std::string preset = "kitti";
  auto* benchc = app.add_subcommand("bench", "Time extraction, search and scans");
  benchc->add_option("--ckpt", a, "Checkpoint (random weights from --preset when omitted)");
  benchc->add_option("--preset", preset, "kitti, nclt or toy");
  benchc->add_option("--reps", bc.reps, "Repetitions");
  benchc->add_option("--db-size", bc.db_size, "Search database size");
  benchc->add_option("--threads", bc.threads, "Parallel scan threads");
  benchc->add_option("--out", out, "CSV output (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*synth) return run_synth(a, out);
    if (*project) return run_project(a, b, out);
    if (*overlaps) return run_overlaps(a, b, c, out);
    if (*trainc) return run_train(a, b, c, out);
    if (*embed) return run_embed(a, b, c, out);
    if (*search) return run_search(a, b, k, out);
    if (*eval_loop) return run_eval_loop(a, b, c, d, out);
    if (*eval_place) return run_eval_place(a, b, c, d, e, out);
    if (*benchc) return run_bench(a, preset, bc, out);
    return run_selfcheck_cmd();
  } catch (const ContractError& err) {
    std::cerr << "contract error: " << err.what() << "\n";
    return kExitContract;
  } catch (const DegenerateInput& err) {
    std::cerr << "degenerate input: " << err.what() << "\n";
    return kExitDegenerate;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitFailure;
  }
}
