#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rvm/tensor.hpp"

namespace rvm {

struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<Parameter>;

struct AdamConfig {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter in registration order.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// Bias-corrected Adam update; zeroes the gradients afterwards.
/// Throws ContractError naming the first parameter without a gradient.
void adam_step(ParameterList& params, AdamState& state);

void zero_grad(ParameterList& params);

// Checkpoint file: "OMCK", u32 count, then per tensor u16 name length, UTF-8
// name, u8 ndim, u32 dims, little-endian f32 payload.
void save_checkpoint(const std::filesystem::path& path, const ParameterList& params);
ParameterList load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `dest` by name. Every destination parameter
/// must be present with an identical shape.
void assign_parameters(ParameterList& dest, const ParameterList& source);

}  // namespace rvm
