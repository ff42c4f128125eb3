#include "rvm/olm.hpp"

#include <cmath>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"

namespace rvm {

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::forward_shifted: return "forward_shifted";
    case Direction::backward: return "backward";
    case Direction::backward_shifted: return "backward_shifted";
  }
  return "?";
}

void OlmConfig::validate() const {
  if (blocks < 1) throw ConfigError("olm: block count L must be at least 1");
  if (d_model < 1) throw ConfigError("olm: d_model must be positive");
  if (expand < d_model) throw ConfigError("olm: expand E must be at least d_model");
  if (state < 1) throw ConfigError("olm: state N must be at least 1");
  if (conv_kernel % 2 == 0) throw ConfigError("olm: conv kernel must be odd");
}

namespace {

Tensor random_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = sd * normal(rng);
  return t.set_requires_grad();
}

Tensor param_zeros(Shape shape) { return Tensor::zeros(std::move(shape)).set_requires_grad(); }
Tensor param_fill(Shape shape, double v) { return Tensor(std::move(shape), v).set_requires_grad(); }

void fill_zero(Tensor& t) {
  if (!t.defined()) return;
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

OlmWeights OlmWeights::init(const OlmConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model, e = cfg.expand, n = cfg.state, k = cfg.conv_kernel;
  const std::size_t r = cfg.resolved_delta_rank();
  OlmWeights w;
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    OlmBlockWeights b;
    b.norm_gain = param_fill({d}, 1.0);
    b.norm_bias = param_zeros({d});
    b.lin_x_weight = random_tensor({d, e}, 1.0 / std::sqrt(double(d)), rng);
    b.lin_x_bias = param_zeros({e});
    b.lin_z_weight = random_tensor({d, e}, 1.0 / std::sqrt(double(d)), rng);
    b.lin_z_bias = param_zeros({e});
    for (auto& br : b.branches) {
      br.conv_weight = random_tensor({e, k}, 1.0 / std::sqrt(double(k)), rng);
      br.conv_bias = param_zeros({e});
      br.ssm.proj_bc = random_tensor({e, r + 2 * n}, 1.0 / std::sqrt(double(e)), rng);
      br.ssm.proj_delta = random_tensor({r, e}, 1.0 / std::sqrt(double(r)), rng);
      Tensor dt_bias({e});
      for (auto& v : dt_bias.mutable_data()) {
        const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
        v = dt + std::log(-std::expm1(-dt));
      }
      br.ssm.delta_bias = dt_bias.set_requires_grad();
      Tensor a_log({e, n});
      auto av = a_log.mutable_data();
      for (std::size_t i = 0; i < e; ++i)
        for (std::size_t j = 0; j < n; ++j) av[i * n + j] = std::log(double(j + 1));
      br.ssm.a_log = a_log.set_requires_grad();
      br.ssm.d = param_fill({e}, 1.0);
    }
    b.lin_t_weight = random_tensor({e, d}, 1.0 / std::sqrt(double(e)), rng);
    b.lin_t_bias = param_zeros({d});
    w.blocks.push_back(std::move(b));
  }
  w.final_gain = param_fill({d}, 1.0);
  w.final_bias = param_zeros({d});
  return w;
}

void OlmWeights::zero_projections() {
  for (auto& b : blocks) {
    for (Tensor* t : {&b.lin_x_weight, &b.lin_x_bias, &b.lin_z_weight, &b.lin_z_bias,
                      &b.lin_t_weight, &b.lin_t_bias})
      fill_zero(*t);
    for (auto& br : b.branches)
      for (Tensor* t : {&br.conv_weight, &br.conv_bias, &br.ssm.proj_bc, &br.ssm.proj_delta})
        fill_zero(*t);
  }
}

void OlmWeights::append_parameters(ParameterList& out) const {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "olm.L" + std::to_string(l) + ".";
    out.push_back({p + "norm.gain", b.norm_gain});
    out.push_back({p + "norm.bias", b.norm_bias});
    out.push_back({p + "lin_x.weight", b.lin_x_weight});
    out.push_back({p + "lin_x.bias", b.lin_x_bias});
    out.push_back({p + "lin_z.weight", b.lin_z_weight});
    out.push_back({p + "lin_z.bias", b.lin_z_bias});
    for (auto d : kDirections) {
      const auto& br = b.branch(d);
      const std::string q = p + direction_name(d) + ".";
      out.push_back({q + "conv1d.weight", br.conv_weight});
      out.push_back({q + "conv1d.bias", br.conv_bias});
      out.push_back({q + "A_log", br.ssm.a_log});
      out.push_back({q + "D", br.ssm.d});
      out.push_back({q + "proj_Δ.weight", br.ssm.proj_delta});
      out.push_back({q + "proj_Δ.bias", br.ssm.delta_bias});
      out.push_back({q + "proj_BC", br.ssm.proj_bc});
    }
    out.push_back({p + "lin_T.weight", b.lin_t_weight});
    out.push_back({p + "lin_T.bias", b.lin_t_bias});
  }
  out.push_back({"olm.norm_f.gain", final_gain});
  out.push_back({"olm.norm_f.bias", final_bias});
}

Tensor shift(const Tensor& seq, std::size_t a) {
  if (seq.ndim() != 2) throw DimensionError("shift expects [M×D], got " + shape_str(seq.shape()));
  if (a >= seq.dim(0))
    throw ContractError("shift offset " + std::to_string(a) + " out of range for length " +
                        std::to_string(seq.dim(0)));
  return roll_rows(seq, a);
}

TokenSequence shift(const TokenSequence& seq, std::size_t a) {
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < seq.batch(); ++b) items.push_back(shift(seq.item(b), a));
  return TokenSequence::from_items(items);
}

Tensor flip(const Tensor& seq) { return flip_rows(seq); }

TokenSequence flip(const TokenSequence& seq) {
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < seq.batch(); ++b) items.push_back(flip(seq.item(b)));
  return TokenSequence::from_items(items);
}

namespace {

void check_block_shapes(const Tensor& prev, const OlmConfig& cfg, const OlmBlockWeights& w) {
  if (prev.ndim() != 2 || prev.dim(1) != cfg.d_model)
    throw DimensionError("olm input (norm line): expected [M×" + std::to_string(cfg.d_model) +
                         "], got " + shape_str(prev.shape()));
  if (w.lin_x_weight.shape() != Shape{cfg.d_model, cfg.expand} ||
      w.lin_z_weight.shape() != Shape{cfg.d_model, cfg.expand})
    throw DimensionError("olm x/z projection line: weights " + shape_str(w.lin_x_weight.shape()) +
                         " and " + shape_str(w.lin_z_weight.shape()) + " do not map D to E");
  if (w.lin_t_weight.shape() != Shape{cfg.expand, cfg.d_model})
    throw DimensionError("olm output projection line: weight " +
                         shape_str(w.lin_t_weight.shape()) + " does not map E to D");
}

// Runs one direction on x [M×E] and returns its output re-aligned to forward
// positions.
Tensor run_branch(const Tensor& x, const OlmBranchWeights& br, Direction d, std::size_t a,
                  ssm::ScanAlgo algo) {
  const std::size_t m = x.dim(0);
  Tensor seq = x;
  if (is_shifted(d)) seq = shift(seq, a);
  if (is_backward(d)) seq = flip(seq);
  Tensor xc = silu(conv1d_circular_depthwise(seq, br.conv_weight, br.conv_bias));
  Tensor y = ssm::selective_ssm(xc, br.ssm, algo);
  if (is_backward(d)) y = flip(y);
  if (is_shifted(d) && a != 0) y = shift(y, m - a);
  return y;
}

Tensor block_item(const Tensor& prev, const OlmConfig& cfg, const OlmBlockWeights& w,
                  std::size_t a, const std::vector<Direction>& dirs) {
  check_block_shapes(prev, cfg, w);
  const Tensor normed = layer_norm_rows(prev, w.norm_gain, w.norm_bias);
  const Tensor x = linear(normed, w.lin_x_weight, w.lin_x_bias);
  const Tensor gate = silu(linear(normed, w.lin_z_weight, w.lin_z_bias));
  Tensor acc;
  for (auto d : dirs) {
    Tensor y = mul(run_branch(x, w.branch(d), d, a, cfg.scan), gate);
    acc = acc.defined() ? add(acc, y) : y;
  }
  return add(linear(acc, w.lin_t_weight, w.lin_t_bias), prev);
}

}  // namespace

TokenSequence olm_forward(const TokenSequence& prev, const OlmConfig& cfg,
                          const OlmBlockWeights& weights, Rng& rng) {
  cfg.validate();
  const std::size_t m = prev.length();
  const std::size_t a = cfg.train_mode ? uniform_index(rng, m) : 0;
  const std::vector<Direction> dirs(kDirections.begin(), kDirections.end());
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < prev.batch(); ++b)
    items.push_back(block_item(prev.item(b), cfg, weights, a, dirs));
  return TokenSequence::from_items(items);
}

TokenSequence olm_stack(const TokenSequence& tokens, const OlmConfig& cfg,
                        const OlmWeights& weights, Rng& rng) {
  cfg.validate();
  if (weights.blocks.size() != cfg.blocks)
    throw ContractError("olm weights hold " + std::to_string(weights.blocks.size()) +
                        " blocks, config expects " + std::to_string(cfg.blocks));
  TokenSequence t = tokens;
  for (const auto& b : weights.blocks) t = olm_forward(t, cfg, b, rng);
  std::vector<Tensor> items;
  for (std::size_t b = 0; b < t.batch(); ++b)
    items.push_back(layer_norm_rows(t.item(b), weights.final_gain, weights.final_bias));
  return TokenSequence::from_items(items);
}

Tensor olm_single_branch(const Tensor& prev, const OlmConfig& cfg, const OlmBlockWeights& w,
                         Direction d, std::size_t a) {
  return block_item(prev, cfg, w, a, {d});
}

}  // namespace rvm
