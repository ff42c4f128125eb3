#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rvm/optim.hpp"
#include "rvm/random.hpp"
#include "rvm/tensor.hpp"

namespace rvm {

/// Entries drawn uniformly from [lo, hi).
Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);

/// Largest per-input relative error ||analytic - numeric|| / max(||analytic||,
/// ||numeric||, floor) between tape gradients and central differences of the
/// scalar sum(fn(inputs) * w), w a fixed random weighting.
double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                 std::vector<Tensor> inputs, Rng& rng, double eps = 1e-5, double floor = 1e-7);

/// Same measure for parameters held in place by a model. `loss` builds a
/// scalar from the current parameter values; up to `per_tensor` coordinates
/// of each parameter are probed. Returns the worst tensor and its error and
/// leaves every gradient zeroed.
std::pair<std::string, double> gradcheck_params(ParameterList& params,
                                                const std::function<Tensor()>& loss, Rng& rng,
                                                std::size_t per_tensor = 12, double eps = 1e-5,
                                                double floor = 1e-7);

}  // namespace rvm
