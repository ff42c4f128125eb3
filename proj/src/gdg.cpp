#include "rvm/gdg.hpp"

#include <cmath>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"

namespace rvm {

void VladConfig::validate() const {
  if (clusters < 1) throw ConfigError("vlad: cluster count K must be at least 1");
  if (input_dim < 1 || hidden < 1 || output_dim < 1)
    throw ConfigError("vlad: dimensions must be positive");
}

namespace {
Tensor random_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = sd * normal(rng);
  return t.set_requires_grad();
}
}  // namespace

GdgWeights GdgWeights::init(const VladConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t k = cfg.clusters, d = cfg.input_dim, h = cfg.hidden, o = cfg.output_dim;
  GdgWeights w;
  w.centers = random_tensor({k, d}, 1.0 / std::sqrt(double(d)), rng);
  w.assign_weight = random_tensor({d, k}, 1.0 / std::sqrt(double(d)), rng);
  w.assign_bias = Tensor::zeros({k}).set_requires_grad();
  w.mlp_weight1 = random_tensor({k * d, h}, 1.0 / std::sqrt(double(k * d)), rng);
  w.mlp_bias1 = Tensor::zeros({h}).set_requires_grad();
  w.mlp_weight2 = random_tensor({h, o}, 1.0 / std::sqrt(double(h)), rng);
  w.mlp_bias2 = Tensor::zeros({o}).set_requires_grad();
  return w;
}

void GdgWeights::append_parameters(ParameterList& out) const {
  out.push_back({"gdg.vlad.centers", centers});
  out.push_back({"gdg.vlad.assign.weight", assign_weight});
  out.push_back({"gdg.vlad.assign.bias", assign_bias});
  out.push_back({"gdg.mlp.hidden.weight", mlp_weight1});
  out.push_back({"gdg.mlp.hidden.bias", mlp_bias1});
  out.push_back({"gdg.mlp.out.weight", mlp_weight2});
  out.push_back({"gdg.mlp.out.bias", mlp_bias2});
}

Tensor netvlad_forward(const Tensor& seq, const Tensor& centers, const Tensor& assign_weight,
                       const Tensor& assign_bias) {
  if (seq.ndim() != 2) throw DimensionError("netvlad expects [M×D], got " + shape_str(seq.shape()));
  const Tensor alpha = softmax_rows(linear(seq, assign_weight, assign_bias));
  const Tensor v = normalize_rows(vlad_aggregate(seq, alpha, centers));
  return l2_normalize(reshape(v, {v.numel()}));
}

Tensor netvlad_forward(const TokenSequence& seq, const Tensor& centers,
                       const Tensor& assign_weight, const Tensor& assign_bias) {
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < seq.batch(); ++b)
    items.push_back(netvlad_forward(seq.item(b), centers, assign_weight, assign_bias));
  return stack(items);
}

Tensor gdg_descriptor(const Tensor& seq, const VladConfig& cfg, const GdgWeights& w) {
  if (seq.ndim() != 2 || seq.dim(1) != cfg.input_dim)
    throw DimensionError("gdg expects [M×" + std::to_string(cfg.input_dim) + "], got " +
                         shape_str(seq.shape()));
  const Tensor v = netvlad_forward(seq, w.centers, w.assign_weight, w.assign_bias);
  const Tensor row = reshape(v, {1, v.numel()});
  const Tensor hidden = silu(linear(row, w.mlp_weight1, w.mlp_bias1));
  const Tensor out = linear(hidden, w.mlp_weight2, w.mlp_bias2);
  bool nonzero = false;
  for (double x : out.data()) {
    if (!std::isfinite(x)) throw DegenerateInput("gdg: non-finite descriptor before normalization");
    nonzero = nonzero || x != 0.0;
  }
  if (!nonzero) throw ContractError("gdg: zero-norm descriptor before normalization");
  return l2_normalize(reshape(out, {cfg.output_dim}));
}

GlobalDescriptor gdg_forward(const Tensor& seq, const VladConfig& cfg, const GdgWeights& w,
                             std::uint32_t scan_id) {
  const Tensor g = gdg_descriptor(seq, cfg, w);
  return GlobalDescriptor{std::vector<double>(g.data().begin(), g.data().end()), scan_id};
}

}  // namespace rvm
