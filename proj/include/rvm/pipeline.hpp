#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rvm/backbone.hpp"
#include "rvm/config.hpp"
#include "rvm/gdg.hpp"
#include "rvm/olm.hpp"
#include "rvm/optim.hpp"
#include "rvm/rangeview.hpp"

namespace rvm {

/// Model description: sensor projection, backbone plan, sequence blocks and
/// descriptor head. Serialized as key=value text.
struct PipelineConfig {
  ProjectionConfig projection;
  BackboneConfig backbone = BackboneConfig::kitti();
  OlmConfig olm;
  VladConfig vlad;
  bool bypass_olm = false;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError when the parts disagree (for example, backbone
  /// channels differing from the sequence width).
  void validate() const;
  std::string to_text() const;
  static PipelineConfig from_keys(const KeyValues& kv);
  static PipelineConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// 1×64×900 input, 256-wide sequence, 64 clusters, 256-dim descriptor.
  static PipelineConfig kitti();
  /// 1×32×900 input, otherwise as kitti().
  static PipelineConfig nclt();
  /// 1×16×180 input and a narrow model, sized for single-core training runs.
  static PipelineConfig toy();
};

class Pipeline {
 public:
  /// Randomly initialized from `cfg.init_seed`.
  explicit Pipeline(PipelineConfig cfg);

  const PipelineConfig& config() const { return cfg_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }
  const BackboneWeights& backbone() const { return backbone_; }
  const OlmWeights& olm() const { return olm_; }
  OlmWeights& olm() { return olm_; }
  const GdgWeights& gdg() const { return gdg_; }

  /// Differentiable descriptor [out] for one network input [1×H×W]. In train
  /// mode the shift offsets are drawn from `rng`.
  Tensor descriptor(const Tensor& input, Rng& rng, bool train) const;
  /// Token sequence [M×D] entering the descriptor head.
  Tensor tokens(const Tensor& input, Rng& rng, bool train) const;

  /// Eval-mode descriptor of one range image.
  GlobalDescriptor embed(const RangeImage& image, std::uint32_t scan_id) const;
  GlobalDescriptor embed_input(const Tensor& input, std::uint32_t scan_id) const;

  void save(const std::filesystem::path& checkpoint) const;
  void load(const std::filesystem::path& checkpoint);

 private:
  PipelineConfig cfg_;
  BackboneWeights backbone_;
  OlmWeights olm_;
  GdgWeights gdg_;
  ParameterList params_;
};

}  // namespace rvm
