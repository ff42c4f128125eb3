#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rvm/optim.hpp"
#include "rvm/random.hpp"
#include "rvm/rangeview.hpp"
#include "rvm/tensor.hpp"

namespace rvm {

/// Feature sequence [B×M×D] passed between backbone, sequence blocks and the
/// descriptor head. M is the range-image width.
struct TokenSequence {
  Tensor values;

  std::size_t batch() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
  Tensor item(std::size_t b) const;  // [M×D]
  static TokenSequence from_items(const std::vector<Tensor>& items);
};

struct StageSpec {
  std::size_t out_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t stride_h = 2;
};

enum class SppMode { concat, add };

struct SppConfig {
  std::size_t kernel = 5;
  std::size_t depth = 3;
  SppMode mode = SppMode::concat;

  void validate() const;
};

struct BackboneConfig {
  std::vector<StageSpec> stages;
  SppConfig spp;

  std::size_t channels() const;
  /// Heights after each stage, starting with the input height.
  std::vector<std::size_t> height_trace(std::size_t input_height) const;
  /// Throws ConfigError (with the height trace) unless the stages reduce
  /// `input_height` to exactly 1.
  void validate(std::size_t input_height) const;

  /// 64 rows: five 3/2 stages (64→31→15→7→3→1) and a 1×1 stage, 256 channels.
  static BackboneConfig kitti();
  /// 32 rows: four 3/2 stages (32→15→7→3→1) and a 1×1 stage, 256 channels.
  static BackboneConfig nclt();
};

struct BackboneWeights {
  std::vector<Tensor> conv_weight;  // [C_out×C_in×k×1]
  std::vector<Tensor> conv_bias;    // [C_out]
  Tensor spp_weight;                // [(depth+1)·C × C], concat mode only
  Tensor spp_bias;                  // [C], concat mode only

  static BackboneWeights init(const BackboneConfig& cfg, Rng& rng);
  void append_parameters(ParameterList& out) const;
};

/// Chained same-length circular max pools p1..p_depth of x ([M×D]); concat
/// mode fuses [x, p1, ...] through a per-position linear map back to D
/// channels, add mode returns x + p1 + ... .
Tensor spp_forward(const Tensor& seq, const SppConfig& cfg, const Tensor& weight = {},
                   const Tensor& bias = {});
TokenSequence spp_forward(const TokenSequence& seq, const SppConfig& cfg,
                          const Tensor& weight = {}, const Tensor& bias = {});

/// images: [1×H×W] or [B×1×H×W], no-return pixels already zeroed.
TokenSequence backbone_forward(const Tensor& images, const BackboneConfig& cfg,
                               const BackboneWeights& weights);

/// Circular shift of the last (width) axis: column j of the result is column
/// (j + s) mod W of the input.
Tensor shift_columns(const Tensor& image, std::size_t s);

}  // namespace rvm
