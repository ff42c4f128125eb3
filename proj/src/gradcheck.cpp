#include "rvm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rvm/ops.hpp"

namespace rvm {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = uniform(rng, lo, hi);
  return t;
}

namespace {

struct WeightedOutput {
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  Tensor weights;

  double value(const std::vector<Tensor>& inputs) const {
    const Tensor out = fn(inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * weights[i];
    return s;
  }
};

}  // namespace

double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                 std::vector<Tensor> inputs, Rng& rng, double eps, double floor) {
  for (auto& t : inputs) {
    t = t.clone();
    t.set_requires_grad(true);
  }
  const Tensor probe = fn(inputs);
  WeightedOutput wo{fn, uniform_tensor(probe.shape(), rng)};

  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(mul(fn(inputs), wo.weights));
    }
    tape.backward(loss);
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(inputs[k].numel(), 0.0);
    if (inputs[k].has_grad()) {
      const auto g = inputs[k].grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    std::vector<double> numeric(inputs[k].numel());
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      auto data = inputs[k].mutable_data();
      const double orig = data[i];
      data[i] = orig + eps;
      const double fp = wo.value(inputs);
      data[i] = orig - eps;
      const double fm = wo.value(inputs);
      data[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * eps);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), floor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

std::pair<std::string, double> gradcheck_params(ParameterList& params,
                                                const std::function<Tensor()>& loss, Rng& rng,
                                                std::size_t per_tensor, double eps, double floor) {
  for (auto& p : params) {
    p.value.set_requires_grad(true);
    p.value.zero_grad();
  }
  {
    Tape tape;
    Tensor l;
    {
      TapeScope scope(tape);
      l = loss();
    }
    tape.backward(l);
  }
  std::pair<std::string, double> worst{"", 0.0};
  for (auto& p : params) {
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(std::span<std::size_t>(idx), rng);
    idx.resize(std::min(n, per_tensor));
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i : idx) {
      const double a = p.value.has_grad() ? p.value.grad()[i] : 0.0;
      auto data = p.value.mutable_data();
      const double orig = data[i];
      data[i] = orig + eps;
      const double fp = loss().item();
      data[i] = orig - eps;
      const double fm = loss().item();
      data[i] = orig;
      const double num = (fp - fm) / (2.0 * eps);
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
    const double err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    if (err > worst.second) worst = {p.name, err};
  }
  for (auto& p : params) p.value.zero_grad();
  return worst;
}

}  // namespace rvm
