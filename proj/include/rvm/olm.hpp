#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rvm/backbone.hpp"
#include "rvm/optim.hpp"
#include "rvm/random.hpp"
#include "rvm/ssm.hpp"
#include "rvm/tensor.hpp"

namespace rvm {

enum class Direction { forward, forward_shifted, backward, backward_shifted };

inline constexpr std::array<Direction, 4> kDirections{
    Direction::forward, Direction::forward_shifted, Direction::backward,
    Direction::backward_shifted};

const char* direction_name(Direction d);
inline bool is_shifted(Direction d) {
  return d == Direction::forward_shifted || d == Direction::backward_shifted;
}
inline bool is_backward(Direction d) {
  return d == Direction::backward || d == Direction::backward_shifted;
}

struct OlmConfig {
  std::size_t blocks = 1;       // L
  std::size_t d_model = 256;    // D
  std::size_t expand = 512;     // E
  std::size_t state = 16;       // N
  std::size_t conv_kernel = 3;  // odd, circular padding
  std::size_t delta_rank = 0;   // 0 means ceil(D / 16)
  bool train_mode = false;
  std::uint64_t seed = 0;
  ssm::ScanAlgo scan = ssm::ScanAlgo::parallel;

  std::size_t resolved_delta_rank() const { return delta_rank ? delta_rank : (d_model + 15) / 16; }
  void validate() const;
};

struct OlmBranchWeights {
  Tensor conv_weight;  // [E×k]
  Tensor conv_bias;    // [E]
  ssm::SelectiveSsmWeights ssm;
};

struct OlmBlockWeights {
  Tensor norm_gain, norm_bias;  // [D]
  Tensor lin_x_weight, lin_x_bias;  // [D×E], [E]
  Tensor lin_z_weight, lin_z_bias;  // [D×E], [E]
  std::array<OlmBranchWeights, 4> branches;  // indexed like kDirections
  Tensor lin_t_weight, lin_t_bias;  // [E×D], [D]

  OlmBranchWeights& branch(Direction d) { return branches[static_cast<std::size_t>(d)]; }
  const OlmBranchWeights& branch(Direction d) const {
    return branches[static_cast<std::size_t>(d)];
  }
};

struct OlmWeights {
  std::vector<OlmBlockWeights> blocks;
  Tensor final_gain, final_bias;  // [D]

  static OlmWeights init(const OlmConfig& cfg, Rng& rng);
  /// Every linear/conv weight and bias set to zero; norms keep unit gain.
  void zero_projections();
  void append_parameters(ParameterList& out) const;
};

/// Position i of the result holds position (i + a) mod M. Requires a < M.
Tensor shift(const Tensor& seq, std::size_t a);
TokenSequence shift(const TokenSequence& seq, std::size_t a);
Tensor flip(const Tensor& seq);
TokenSequence flip(const TokenSequence& seq);

/// One block with residual: returns Linear_T(Σ_o y_o ⊙ SiLU(z)) + T_prev.
/// In train mode the shift offset is one draw from `rng`, shared by both
/// shifted branches; eval mode uses offset 0 and leaves `rng` untouched.
TokenSequence olm_forward(const TokenSequence& prev, const OlmConfig& cfg,
                          const OlmBlockWeights& weights, Rng& rng);

/// Applies every block in order, then the final layer norm.
TokenSequence olm_stack(const TokenSequence& tokens, const OlmConfig& cfg,
                        const OlmWeights& weights, Rng& rng);

/// Single-branch reference used by tests: layer norm, Linear_x/Linear_z,
/// the branch for direction `d` with offset `a`, gating, Linear_T and residual.
Tensor olm_single_branch(const Tensor& prev, const OlmConfig& cfg, const OlmBlockWeights& w,
                         Direction d, std::size_t a);

}  // namespace rvm
