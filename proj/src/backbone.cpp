#include "rvm/backbone.hpp"

#include <cmath>
#include <sstream>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"

namespace rvm {

Tensor TokenSequence::item(std::size_t b) const { return select(values, b); }

TokenSequence TokenSequence::from_items(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractError("token sequence needs at least one item");
  return TokenSequence{stack(items)};
}

void SppConfig::validate() const {
  if (kernel % 2 == 0) throw ConfigError("spp kernel must be odd, got " + std::to_string(kernel));
  if (depth < 1) throw ConfigError("spp depth must be at least 1");
}

std::size_t BackboneConfig::channels() const {
  if (stages.empty()) throw ConfigError("backbone has no stages");
  return stages.back().out_channels;
}

std::vector<std::size_t> BackboneConfig::height_trace(std::size_t input_height) const {
  std::vector<std::size_t> trace{input_height};
  std::size_t h = input_height;
  for (const auto& s : stages) {
    if (s.stride_h == 0 || s.kernel_h == 0 || s.kernel_h > h) break;
    h = (h - s.kernel_h) / s.stride_h + 1;
    trace.push_back(h);
  }
  return trace;
}

void BackboneConfig::validate(std::size_t input_height) const {
  if (stages.empty()) throw ConfigError("backbone has no stages");
  for (const auto& s : stages)
    if (s.out_channels == 0 || s.kernel_h == 0 || s.stride_h == 0)
      throw ConfigError("backbone stage with zero channels, kernel or stride");
  spp.validate();
  const auto trace = height_trace(input_height);
  if (trace.size() != stages.size() + 1 || trace.back() != 1) {
    std::ostringstream os;
    os << "backbone stages do not reduce height " << input_height << " to 1; height trace:";
    for (auto h : trace) os << ' ' << h;
    if (trace.size() != stages.size() + 1) os << " (stage " << trace.size() << " kernel exceeds height)";
    throw ConfigError(os.str());
  }
}

BackboneConfig BackboneConfig::kitti() {
  BackboneConfig c;
  c.stages = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {128, 3, 2}, {256, 3, 2}, {256, 1, 1}};
  return c;
}

BackboneConfig BackboneConfig::nclt() {
  BackboneConfig c;
  c.stages = {{32, 3, 2}, {64, 3, 2}, {128, 3, 2}, {256, 3, 2}, {256, 1, 1}};
  return c;
}

BackboneWeights BackboneWeights::init(const BackboneConfig& cfg, Rng& rng) {
  BackboneWeights w;
  std::size_t in = 1;
  for (const auto& s : cfg.stages) {
    Tensor wt({s.out_channels, in, s.kernel_h, 1});
    const double sd = std::sqrt(2.0 / static_cast<double>(in * s.kernel_h));
    for (auto& v : wt.mutable_data()) v = sd * normal(rng);
    w.conv_weight.push_back(wt.set_requires_grad());
    w.conv_bias.push_back(Tensor::zeros({s.out_channels}).set_requires_grad());
    in = s.out_channels;
  }
  if (cfg.spp.mode == SppMode::concat) {
    const std::size_t fan_in = (cfg.spp.depth + 1) * in;
    Tensor wt({fan_in, in});
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : wt.mutable_data()) v = sd * normal(rng);
    w.spp_weight = wt.set_requires_grad();
    w.spp_bias = Tensor::zeros({in}).set_requires_grad();
  }
  return w;
}

void BackboneWeights::append_parameters(ParameterList& out) const {
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.push_back({"backbone.stage" + std::to_string(i) + ".weight", conv_weight[i]});
    out.push_back({"backbone.stage" + std::to_string(i) + ".bias", conv_bias[i]});
  }
  if (spp_weight.defined()) {
    out.push_back({"backbone.spp.weight", spp_weight});
    out.push_back({"backbone.spp.bias", spp_bias});
  }
}

Tensor spp_forward(const Tensor& seq, const SppConfig& cfg, const Tensor& weight,
                   const Tensor& bias) {
  cfg.validate();
  if (seq.ndim() != 2) throw DimensionError("spp expects [M×D], got " + shape_str(seq.shape()));
  std::vector<Tensor> parts{seq};
  Tensor p = seq;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    p = maxpool_rows_circular(p, cfg.kernel);
    parts.push_back(p);
  }
  if (cfg.mode == SppMode::add) {
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return acc;
  }
  if (!weight.defined())
    throw ContractError("concat-mode spp needs a fusion weight");
  return linear(concat_cols(parts), weight, bias);
}

TokenSequence spp_forward(const TokenSequence& seq, const SppConfig& cfg, const Tensor& weight,
                          const Tensor& bias) {
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < seq.batch(); ++b)
    items.push_back(spp_forward(seq.item(b), cfg, weight, bias));
  return TokenSequence::from_items(items);
}

namespace {

Tensor backbone_item(const Tensor& image, const BackboneConfig& cfg, const BackboneWeights& w) {
  if (image.ndim() != 3 || image.dim(0) != 1)
    throw DimensionError("backbone expects a [1×H×W] image, got " + shape_str(image.shape()));
  cfg.validate(image.dim(1));
  if (w.conv_weight.size() != cfg.stages.size())
    throw ContractError("backbone weights do not match the stage plan");
  const std::size_t width = image.dim(2);
  Tensor x = image;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i)
    x = silu(conv_vertical(x, w.conv_weight[i], cfg.stages[i].stride_h, w.conv_bias[i]));
  Tensor seq = transpose(reshape(x, {x.dim(0), width}));
  return spp_forward(seq, cfg.spp, w.spp_weight, w.spp_bias);
}

}  // namespace

TokenSequence backbone_forward(const Tensor& images, const BackboneConfig& cfg,
                               const BackboneWeights& weights) {
  if (images.ndim() == 3) return TokenSequence{stack(std::vector<Tensor>{backbone_item(images, cfg, weights)})};
  if (images.ndim() != 4)
    throw DimensionError("backbone expects [1×H×W] or [B×1×H×W], got " + shape_str(images.shape()));
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < images.dim(0); ++b)
    items.push_back(backbone_item(select(images, b), cfg, weights));
  return TokenSequence::from_items(items);
}

Tensor shift_columns(const Tensor& image, std::size_t s) {
  const auto& shape = image.shape();
  const std::size_t w = shape.back();
  if (s >= w) throw ContractError("column shift " + std::to_string(s) + " out of range for width " + std::to_string(w));
  const std::size_t rows = image.numel() / w;
  std::vector<double> out(image.numel());
  const auto in = image.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = in[r * w + (j + s) % w];
  return Tensor(shape, std::move(out));
}

}  // namespace rvm
