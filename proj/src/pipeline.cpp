#include "rvm/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"

namespace rvm {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const char* spp_mode_name(SppMode m) { return m == SppMode::concat ? "concat" : "add"; }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void PipelineConfig::validate() const {
  projection.validate();
  backbone.validate(projection.height);
  olm.validate();
  vlad.validate();
  if (backbone.channels() != olm.d_model)
    throw ConfigError("backbone output channels " + std::to_string(backbone.channels()) +
                      " differ from d_model " + std::to_string(olm.d_model));
  if (vlad.input_dim != olm.d_model)
    throw ConfigError("vlad input dim " + std::to_string(vlad.input_dim) +
                      " differs from d_model " + std::to_string(olm.d_model));
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os << "height=" << projection.height << "\n"
     << "width=" << projection.width << "\n"
     << "fov_up_deg=" << fmt(projection.fov_up / kDeg) << "\n"
     << "fov_down_deg=" << fmt(projection.fov_down / kDeg) << "\n"
     << "max_range=" << fmt(projection.max_range) << "\n";
  for (const auto& s : backbone.stages)
    os << "stage=" << s.out_channels << ',' << s.kernel_h << ',' << s.stride_h << "\n";
  os << "spp_kernel=" << backbone.spp.kernel << "\n"
     << "spp_depth=" << backbone.spp.depth << "\n"
     << "spp_mode=" << spp_mode_name(backbone.spp.mode) << "\n"
     << "olm_blocks=" << olm.blocks << "\n"
     << "olm_expand=" << olm.expand << "\n"
     << "olm_state=" << olm.state << "\n"
     << "olm_conv_kernel=" << olm.conv_kernel << "\n"
     << "olm_delta_rank=" << olm.resolved_delta_rank() << "\n"
     << "olm_scan=" << (olm.scan == ssm::ScanAlgo::parallel ? "parallel" : "sequential") << "\n"
     << "bypass_olm=" << (bypass_olm ? "true" : "false") << "\n"
     << "vlad_clusters=" << vlad.clusters << "\n"
     << "mlp_hidden=" << vlad.hidden << "\n"
     << "descriptor_dim=" << vlad.output_dim << "\n"
     << "init_seed=" << init_seed << "\n";
  return os.str();
}

PipelineConfig PipelineConfig::from_keys(const KeyValues& kv) {
  const std::string preset = kv.get("preset", "");
  PipelineConfig base;
  if (preset.empty() || preset == "kitti") base = kitti();
  else if (preset == "nclt") base = nclt();
  else if (preset == "toy") base = toy();
  else throw ConfigError("preset must be kitti, nclt or toy, got '" + preset + "'");

  PipelineConfig c = base;
  c.projection.height = kv.get_size("height", base.projection.height);
  c.projection.width = kv.get_size("width", base.projection.width);
  c.projection.fov_up = kv.get_double("fov_up_deg", base.projection.fov_up / kDeg) * kDeg;
  c.projection.fov_down = kv.get_double("fov_down_deg", base.projection.fov_down / kDeg) * kDeg;
  c.projection.max_range = kv.get_double("max_range", base.projection.max_range);
  if (kv.has("stage")) {
    c.backbone.stages.clear();
    for (const auto& s : kv.all("stage")) {
      std::vector<std::size_t> parts;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) parts.push_back(parse_size(item, "stage"));
      if (parts.size() != 3)
        throw ConfigError("stage expects 'channels,kernel_h,stride_h', got '" + s + "'");
      c.backbone.stages.push_back({parts[0], parts[1], parts[2]});
    }
  } else if (preset.empty() && c.projection.height == 32) {
    c.backbone = BackboneConfig::nclt();
  }
  c.backbone.spp.kernel = kv.get_size("spp_kernel", base.backbone.spp.kernel);
  c.backbone.spp.depth = kv.get_size("spp_depth", base.backbone.spp.depth);
  const std::string mode = kv.get("spp_mode", spp_mode_name(base.backbone.spp.mode));
  if (mode == "concat") c.backbone.spp.mode = SppMode::concat;
  else if (mode == "add") c.backbone.spp.mode = SppMode::add;
  else throw ConfigError("spp_mode must be concat or add, got '" + mode + "'");

  c.olm.d_model = c.backbone.channels();
  const bool same_width = c.olm.d_model == base.olm.d_model;
  c.olm.blocks = kv.get_size("olm_blocks", base.olm.blocks);
  c.olm.expand = kv.get_size("olm_expand", same_width ? base.olm.expand : 2 * c.olm.d_model);
  c.olm.state = kv.get_size("olm_state", base.olm.state);
  c.olm.conv_kernel = kv.get_size("olm_conv_kernel", base.olm.conv_kernel);
  c.olm.delta_rank = kv.get_size("olm_delta_rank", base.olm.delta_rank);
  const std::string scan = kv.get(
      "olm_scan", base.olm.scan == ssm::ScanAlgo::parallel ? "parallel" : "sequential");
  if (scan == "parallel") c.olm.scan = ssm::ScanAlgo::parallel;
  else if (scan == "sequential") c.olm.scan = ssm::ScanAlgo::sequential;
  else throw ConfigError("olm_scan must be parallel or sequential, got '" + scan + "'");
  c.bypass_olm = kv.get_bool("bypass_olm", base.bypass_olm);

  c.vlad.input_dim = c.olm.d_model;
  c.vlad.clusters = kv.get_size("vlad_clusters", base.vlad.clusters);
  c.vlad.hidden = kv.get_size("mlp_hidden", base.vlad.hidden);
  c.vlad.output_dim = kv.get_size("descriptor_dim", base.vlad.output_dim);
  c.init_seed = kv.get_u64("init_seed", base.init_seed);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return from_keys(KeyValues::load(path));
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text();
}

PipelineConfig PipelineConfig::kitti() {
  PipelineConfig c;
  c.projection = ProjectionConfig::kitti();
  c.backbone = BackboneConfig::kitti();
  return c;
}

PipelineConfig PipelineConfig::nclt() {
  PipelineConfig c;
  c.projection = ProjectionConfig::nclt();
  c.backbone = BackboneConfig::nclt();
  return c;
}

PipelineConfig PipelineConfig::toy() {
  PipelineConfig c;
  c.projection.height = 16;
  c.projection.width = 180;
  c.projection.fov_up = 12.5 * kDeg;
  c.projection.fov_down = 12.5 * kDeg;
  c.projection.max_range = 50.0;
  c.backbone.stages = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  c.olm.d_model = 32;
  c.olm.expand = 64;
  c.olm.state = 8;
  c.vlad.input_dim = 32;
  c.vlad.clusters = 8;
  c.vlad.hidden = 64;
  c.vlad.output_dim = 256;
  return c;
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  backbone_ = BackboneWeights::init(cfg_.backbone, rng);
  olm_ = OlmWeights::init(cfg_.olm, rng);
  gdg_ = GdgWeights::init(cfg_.vlad, rng);
  backbone_.append_parameters(params_);
  olm_.append_parameters(params_);
  gdg_.append_parameters(params_);
}

Tensor Pipeline::tokens(const Tensor& input, Rng& rng, bool train) const {
  const TokenSequence t0 = backbone_forward(input, cfg_.backbone, backbone_);
  if (cfg_.bypass_olm) {
    return layer_norm_rows(t0.item(0), olm_.final_gain, olm_.final_bias);
  }
  OlmConfig oc = cfg_.olm;
  oc.train_mode = train;
  return olm_stack(t0, oc, olm_, rng).item(0);
}

Tensor Pipeline::descriptor(const Tensor& input, Rng& rng, bool train) const {
  return gdg_descriptor(tokens(input, rng, train), cfg_.vlad, gdg_);
}

GlobalDescriptor Pipeline::embed_input(const Tensor& input, std::uint32_t scan_id) const {
  Rng unused(0);
  const Tensor g = descriptor(input, unused, false);
  return GlobalDescriptor{std::vector<double>(g.data().begin(), g.data().end()), scan_id};
}

GlobalDescriptor Pipeline::embed(const RangeImage& image, std::uint32_t scan_id) const {
  if (image.config.height != cfg_.projection.height || image.config.width != cfg_.projection.width)
    throw DimensionError("range image " + std::to_string(image.config.height) + "x" +
                         std::to_string(image.config.width) + " does not match model input " +
                         std::to_string(cfg_.projection.height) + "x" +
                         std::to_string(cfg_.projection.width));
  RangeImage scaled = image;
  scaled.config.max_range = cfg_.projection.max_range;
  return embed_input(to_network_input(scaled), scan_id);
}

void Pipeline::save(const std::filesystem::path& checkpoint) const {
  save_checkpoint(checkpoint, params_);
}

void Pipeline::load(const std::filesystem::path& checkpoint) {
  assign_parameters(params_, load_checkpoint(checkpoint));
}

}  // namespace rvm
