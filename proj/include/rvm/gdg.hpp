#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rvm/backbone.hpp"
#include "rvm/optim.hpp"
#include "rvm/random.hpp"
#include "rvm/tensor.hpp"

namespace rvm {

struct VladConfig {
  std::size_t clusters = 64;  // K
  std::size_t input_dim = 256;
  std::size_t hidden = 1024;
  std::size_t output_dim = 256;

  void validate() const;
};

struct GdgWeights {
  Tensor centers;                   // [K×D]
  Tensor assign_weight;             // [D×K]
  Tensor assign_bias;               // [K]
  Tensor mlp_weight1, mlp_bias1;    // [K·D × H], [H]
  Tensor mlp_weight2, mlp_bias2;    // [H × out], [out]

  static GdgWeights init(const VladConfig& cfg, Rng& rng);
  void append_parameters(ParameterList& out) const;
};

struct GlobalDescriptor {
  std::vector<double> values;
  std::uint32_t scan_id = 0;
};

/// NetVLAD over one [M×D] sequence: softmax assignment, residual sum,
/// intra-normalization, flatten, L2 normalization. Returns [K·D].
Tensor netvlad_forward(const Tensor& seq, const Tensor& centers, const Tensor& assign_weight,
                       const Tensor& assign_bias);
/// Batched form, returns [B × K·D].
Tensor netvlad_forward(const TokenSequence& seq, const Tensor& centers,
                       const Tensor& assign_weight, const Tensor& assign_bias);

/// NetVLAD, MLP with one SiLU hidden layer, L2 normalization. Differentiable;
/// seq is [M×D], result [out]. Throws ContractError when the MLP output is
/// exactly zero.
Tensor gdg_descriptor(const Tensor& seq, const VladConfig& cfg, const GdgWeights& w);

GlobalDescriptor gdg_forward(const Tensor& seq, const VladConfig& cfg, const GdgWeights& w,
                             std::uint32_t scan_id = 0);

}  // namespace rvm
