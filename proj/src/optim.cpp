#include "rvm/optim.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "rvm/binio.hpp"
#include "rvm/error.hpp"

namespace rvm {

void adam_step(ParameterList& params, AdamState& state) {
  for (const auto& p : params)
    if (!p.value.has_grad())
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");

  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: parameter set changed between steps");

  ++state.t;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    auto w = p.mutable_data();
    auto g = p.grad_buffer();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    p.zero_grad();
  }
}

void zero_grad(ParameterList& params) {
  for (auto& p : params) p.value.zero_grad();
}

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  binio::write_magic(os, "OMCK");
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ContractError("checkpoint name too long: " + p.name);
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.value.shape();
    binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) binio::write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

ParameterList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  binio::expect_magic(is, "OMCK", path.string());
  const auto count = binio::read_le<std::uint32_t>(is);
  ParameterList out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = binio::read_le<std::uint16_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError(path.string() + ": truncated name");
    const auto ndim = binio::read_le<std::uint8_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = binio::read_le<std::uint32_t>(is);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = binio::read_le<float>(is);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void assign_parameters(ParameterList& dest, const ParameterList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.value;
  for (auto& p : dest) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.value.shape())
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " +
                        shape_str(it->second->shape()) + ", model expects " +
                        shape_str(p.value.shape()));
    auto src = it->second->data();
    auto dst = p.value.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace rvm
