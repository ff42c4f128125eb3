#include "rvm/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <thread>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"

namespace rvm::ssm {

namespace {

struct SeqDims {
  std::size_t batch, length, channels;
};

SeqDims seq_dims(const Tensor& t, const char* what) {
  if (t.ndim() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.ndim() == 2) return {1, t.dim(0), t.dim(1)};
  throw DimensionError(std::string(what) + " must be [B×M×E] or [M×E], got " +
                       shape_str(t.shape()));
}

// Reads B or C either as per-step [B×M×N] / [M×N] or time-invariant [N].
class StepVector {
 public:
  StepVector(const Tensor& t, std::size_t batch, std::size_t length, std::size_t state,
             const char* what)
      : data_(t.data()), state_(state) {
    if (t.ndim() == 1 && t.dim(0) == state) {
      invariant_ = true;
      return;
    }
    const bool ok3 = t.ndim() == 3 && t.dim(0) == batch && t.dim(1) == length && t.dim(2) == state;
    const bool ok2 = t.ndim() == 2 && batch == 1 && t.dim(0) == length && t.dim(1) == state;
    if (!ok3 && !ok2)
      throw DimensionError(std::string(what) + " has shape " + shape_str(t.shape()) +
                           ", expected [" + std::to_string(batch) + "x" + std::to_string(length) +
                           "x" + std::to_string(state) + "] or [" + std::to_string(state) + "]");
    length_ = length;
  }
  double operator()(std::size_t b, std::size_t m, std::size_t n) const {
    return invariant_ ? data_[n] : data_[(b * length_ + m) * state_ + n];
  }

 private:
  std::span<const double> data_;
  std::size_t state_;
  std::size_t length_ = 0;
  bool invariant_ = false;
};

// States for one sequence. abar and bx are [M×lanes]; h receives [M×lanes].
void scan_states_sequential(const double* abar, const double* bx, std::size_t length,
                            std::size_t lanes, double* h) {
  for (std::size_t l = 0; l < lanes; ++l) h[l] = bx[l];
  for (std::size_t m = 1; m < length; ++m) {
    const double* a = abar + m * lanes;
    const double* b = bx + m * lanes;
    const double* prev = h + (m - 1) * lanes;
    double* cur = h + m * lanes;
    for (std::size_t l = 0; l < lanes; ++l) cur[l] = a[l] * prev[l] + b[l];
  }
}

void blelloch_lanes(const double* abar, const double* bx, std::size_t length, std::size_t lanes,
                    std::size_t lane_begin, std::size_t lane_end, double* h) {
  std::size_t padded = 1;
  while (padded < length) padded *= 2;
  std::vector<Affine> elems(padded), tree(padded);
  for (std::size_t l = lane_begin; l < lane_end; ++l) {
    for (std::size_t m = 0; m < padded; ++m)
      elems[m] = m < length ? Affine{abar[m * lanes + l], bx[m * lanes + l]} : Affine{};
    tree = elems;
    for (std::size_t stride = 1; stride < padded; stride *= 2)
      for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride)
        tree[i] = compose(tree[i], tree[i - stride]);
    tree[padded - 1] = Affine{};
    for (std::size_t stride = padded / 2; stride >= 1; stride /= 2)
      for (std::size_t i = 2 * stride - 1; i < padded; i += 2 * stride) {
        const Affine left = tree[i - stride];
        tree[i - stride] = tree[i];
        tree[i] = compose(left, tree[i]);
      }
    // tree[m] now holds the exclusive prefix; fold in element m and apply to h = 0.
    for (std::size_t m = 0; m < length; ++m)
      h[m * lanes + l] = elems[m].a * tree[m].b + elems[m].b;
  }
}

void scan_states_parallel(const double* abar, const double* bx, std::size_t length,
                          std::size_t lanes, double* h, unsigned threads) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(lanes)));
  if (threads == 1) {
    blelloch_lanes(abar, bx, length, lanes, 0, lanes, h);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (lanes + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(lanes, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(blelloch_lanes, abar, bx, length, lanes, begin, end, h);
  }
  for (auto& th : pool) th.join();
}

Tensor run_scan(const DiscreteSsm& dssm, const Tensor& c, const Tensor& d, const Tensor& x,
                ScanAlgo algo, unsigned threads) {
  const SeqDims xs = seq_dims(x, "scan input x");
  if (xs.batch != dssm.batch || xs.length != dssm.length || xs.channels != dssm.channels)
    throw DimensionError("scan: x " + shape_str(x.shape()) + " does not match discrete system [" +
                         std::to_string(dssm.batch) + "x" + std::to_string(dssm.length) + "x" +
                         std::to_string(dssm.channels) + "]");
  if (d.numel() != dssm.channels)
    throw DimensionError("scan: D has shape " + shape_str(d.shape()) + " for " +
                         std::to_string(dssm.channels) + " channels");
  const StepVector cv(c, dssm.batch, dssm.length, dssm.state, "scan: C");
  const std::size_t lanes = dssm.channels * dssm.state;
  const std::size_t per_item = dssm.length * lanes;
  auto xv = x.data();
  auto dv = d.data();
  std::vector<double> bx(per_item), h(per_item);
  std::vector<double> y(xv.size());
  for (std::size_t b = 0; b < dssm.batch; ++b) {
    const double* xb = xv.data() + b * dssm.length * dssm.channels;
    for (std::size_t m = 0; m < dssm.length; ++m)
      for (std::size_t e = 0; e < dssm.channels; ++e)
        for (std::size_t n = 0; n < dssm.state; ++n) {
          const std::size_t idx = (m * dssm.channels + e) * dssm.state + n;
          bx[idx] = dssm.bbar[b * per_item + idx] * xb[m * dssm.channels + e];
        }
    const double* ab = dssm.abar.data() + b * per_item;
    if (algo == ScanAlgo::sequential)
      scan_states_sequential(ab, bx.data(), dssm.length, lanes, h.data());
    else
      scan_states_parallel(ab, bx.data(), dssm.length, lanes, h.data(), threads);
    for (std::size_t m = 0; m < dssm.length; ++m)
      for (std::size_t e = 0; e < dssm.channels; ++e) {
        double acc = 0.0;
        for (std::size_t n = 0; n < dssm.state; ++n)
          acc += cv(b, m, n) * h[(m * dssm.channels + e) * dssm.state + n];
        const std::size_t yi = (b * dssm.length + m) * dssm.channels + e;
        y[yi] = acc + dv[e] * xb[m * dssm.channels + e];
      }
  }
  return Tensor(x.shape(), std::move(y));
}

}  // namespace

bool DiscreteSsm::time_invariant() const {
  const std::size_t lanes = channels * state;
  for (std::size_t step = 1; step < batch * length; ++step)
    for (std::size_t l = 0; l < lanes; ++l)
      if (abar[step * lanes + l] != abar[l] || bbar[step * lanes + l] != bbar[l]) return false;
  return true;
}

DiscreteSsm discretize(const Tensor& delta, const Tensor& a, const Tensor& b,
                       Discretization mode) {
  const SeqDims ds = seq_dims(delta, "discretize: delta");
  if (a.ndim() != 2 || a.dim(0) != ds.channels)
    throw DimensionError("discretize: A has shape " + shape_str(a.shape()) + ", expected [" +
                         std::to_string(ds.channels) + "xN]");
  const std::size_t state = a.dim(1);
  const StepVector bv(b, ds.batch, ds.length, state, "discretize: B");
  for (double v : delta.data())
    if (!(v > 0.0)) throw ContractError("discretize: step size must be positive, got " +
                                        std::to_string(v));
  DiscreteSsm out;
  out.batch = ds.batch;
  out.length = ds.length;
  out.channels = ds.channels;
  out.state = state;
  const std::size_t total = ds.batch * ds.length * ds.channels * state;
  out.abar.resize(total);
  out.bbar.resize(total);
  auto dv = delta.data();
  auto av = a.data();
  for (std::size_t bi = 0; bi < ds.batch; ++bi)
    for (std::size_t m = 0; m < ds.length; ++m)
      for (std::size_t e = 0; e < ds.channels; ++e) {
        const double dt = dv[(bi * ds.length + m) * ds.channels + e];
        for (std::size_t n = 0; n < state; ++n) {
          const double an = av[e * state + n];
          const double ea = std::exp(dt * an);
          const std::size_t idx = out.index(bi, m, e, n);
          out.abar[idx] = ea;
          if (mode == Discretization::euler || std::fabs(an) < 1e-12)
            out.bbar[idx] = dt * bv(bi, m, n);
          else
            out.bbar[idx] = (ea - 1.0) / an * bv(bi, m, n);
        }
      }
  return out;
}

Tensor scan_sequential(const DiscreteSsm& dssm, const Tensor& c, const Tensor& d,
                       const Tensor& x) {
  return run_scan(dssm, c, d, x, ScanAlgo::sequential, 1);
}

Tensor scan_parallel(const DiscreteSsm& dssm, const Tensor& c, const Tensor& d, const Tensor& x,
                     unsigned threads) {
  return run_scan(dssm, c, d, x, ScanAlgo::parallel, threads);
}

Tensor lti_kernel(const Tensor& abar, const Tensor& bbar, const Tensor& c, std::size_t length) {
  if (abar.ndim() != 2 || bbar.shape() != abar.shape())
    throw DimensionError("lti_kernel: Ā " + shape_str(abar.shape()) + " and B̄ " +
                         shape_str(bbar.shape()) + " must both be [E×N]");
  const std::size_t channels = abar.dim(0), state = abar.dim(1);
  if (c.numel() != state)
    throw DimensionError("lti_kernel: C has shape " + shape_str(c.shape()) + " for N=" +
                         std::to_string(state));
  if (length == 0) throw ContractError("lti_kernel: length must be positive");
  auto av = abar.data();
  auto bv = bbar.data();
  auto cv = c.data();
  std::vector<double> k(channels * length, 0.0);
  for (std::size_t e = 0; e < channels; ++e)
    for (std::size_t n = 0; n < state; ++n) {
      double power = bv[e * state + n];
      for (std::size_t m = 0; m < length; ++m) {
        k[e * length + m] += cv[n] * power;
        power *= av[e * state + n];
      }
    }
  return Tensor({channels, length}, std::move(k));
}

Tensor lti_kernel(const DiscreteSsm& dssm, const Tensor& c, std::size_t length) {
  if (!dssm.time_invariant())
    throw ContractError("lti_kernel: discrete system varies across steps (selective mode)");
  if (c.ndim() != 1)
    throw ContractError("lti_kernel: C must be a fixed [N] vector, got " + shape_str(c.shape()));
  const std::size_t lanes = dssm.channels * dssm.state;
  Tensor abar({dssm.channels, dssm.state},
              std::vector<double>(dssm.abar.begin(), dssm.abar.begin() + lanes));
  Tensor bbar({dssm.channels, dssm.state},
              std::vector<double>(dssm.bbar.begin(), dssm.bbar.begin() + lanes));
  return lti_kernel(abar, bbar, c, length);
}

Tensor causal_conv(const Tensor& x, const Tensor& kernel, const Tensor& d) {
  if (x.ndim() != 2 || kernel.ndim() != 2 || kernel.dim(0) != x.dim(1) ||
      kernel.dim(1) < x.dim(0) || d.numel() != x.dim(1))
    throw DimensionError("causal_conv: x " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ", D " + shape_str(d.shape()));
  const std::size_t length = x.dim(0), channels = x.dim(1), klen = kernel.dim(1);
  auto xv = x.data();
  auto kv = kernel.data();
  auto dv = d.data();
  std::vector<double> y(length * channels);
  for (std::size_t m = 0; m < length; ++m)
    for (std::size_t e = 0; e < channels; ++e) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= m; ++j) acc += kv[e * klen + (m - j)] * xv[j * channels + e];
      y[m * channels + e] = acc + dv[e] * xv[m * channels + e];
    }
  return Tensor({length, channels}, std::move(y));
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d, ScanAlgo algo) {
  if (u.ndim() != 2 || delta.shape() != u.shape())
    throw DimensionError("selective_scan: u " + shape_str(u.shape()) + " and delta " +
                         shape_str(delta.shape()) + " must be equal [M×E]");
  const std::size_t length = u.dim(0), channels = u.dim(1);
  if (a.ndim() != 2 || a.dim(0) != channels)
    throw DimensionError("selective_scan: A " + shape_str(a.shape()) + " for E=" +
                         std::to_string(channels));
  const std::size_t state = a.dim(1);
  const Shape step_shape{length, state};
  if (b.shape() != step_shape || c.shape() != step_shape)
    throw DimensionError("selective_scan: B " + shape_str(b.shape()) + " / C " +
                         shape_str(c.shape()) + ", expected " + shape_str(step_shape));
  if (d.numel() != channels)
    throw DimensionError("selective_scan: D " + shape_str(d.shape()) + " for E=" +
                         std::to_string(channels));

  const std::size_t lanes = channels * state;
  auto uv = u.data(), dtv = delta.data(), av = a.data(), bv = b.data(), cv = c.data(),
       dv = d.data();
  auto abar = std::make_shared<std::vector<double>>(length * lanes);
  std::vector<double> bx(length * lanes);
  for (std::size_t m = 0; m < length; ++m)
    for (std::size_t e = 0; e < channels; ++e) {
      const double dt = dtv[m * channels + e];
      for (std::size_t n = 0; n < state; ++n) {
        const std::size_t idx = (m * channels + e) * state + n;
        (*abar)[idx] = std::exp(dt * av[e * state + n]);
        bx[idx] = dt * bv[m * state + n] * uv[m * channels + e];
      }
    }
  auto h = std::make_shared<std::vector<double>>(length * lanes);
  if (algo == ScanAlgo::sequential)
    scan_states_sequential(abar->data(), bx.data(), length, lanes, h->data());
  else
    scan_states_parallel(abar->data(), bx.data(), length, lanes, h->data(), 1);

  std::vector<double> y(length * channels);
  for (std::size_t m = 0; m < length; ++m)
    for (std::size_t e = 0; e < channels; ++e) {
      double acc = 0.0;
      for (std::size_t n = 0; n < state; ++n)
        acc += cv[m * state + n] * (*h)[(m * channels + e) * state + n];
      y[m * channels + e] = acc + dv[e] * uv[m * channels + e];
    }
  Tensor out({length, channels}, std::move(y));

  Tape* tape = Tape::active();
  const bool track = tape != nullptr && (u.requires_grad() || delta.requires_grad() ||
                                         a.requires_grad() || b.requires_grad() ||
                                         c.requires_grad() || d.requires_grad());
  if (!track) return out;
  out.set_requires_grad(true);
  tape->record(out, {u, delta, a, b, c, d},
               [u, delta, a, b, c, d, abar, h, length, channels,
                state](std::span<const double> gy) mutable {
                 const std::size_t lanes = channels * state;
                 auto uv = u.data(), dtv = delta.data(), av = a.data(), bv = b.data(),
                      cv = c.data(), dv = d.data();
                 std::vector<double> gu(length * channels, 0.0), gdt(length * channels, 0.0),
                     ga(lanes, 0.0), gb(length * state, 0.0), gc(length * state, 0.0),
                     gd(channels, 0.0);
                 std::vector<double> carry(lanes, 0.0);
                 for (std::size_t mm = length; mm-- > 0;) {
                   for (std::size_t e = 0; e < channels; ++e) {
                     const std::size_t xe = mm * channels + e;
                     const double dy = gy[xe];
                     const double dt = dtv[xe];
                     const double ue = uv[xe];
                     gu[xe] += dy * dv[e];
                     gd[e] += dy * ue;
                     for (std::size_t n = 0; n < state; ++n) {
                       const std::size_t l = e * state + n;
                       const std::size_t idx = mm * lanes + l;
                       const double hs = (*h)[idx];
                       const double g = dy * cv[mm * state + n] + carry[l];
                       gc[mm * state + n] += dy * hs;
                       const double hprev = mm > 0 ? (*h)[idx - lanes] : 0.0;
                       const double ab = (*abar)[idx];
                       const double dab = g * hprev * ab;  // d/d(ΔA) of Ā·h_prev
                       ga[l] += dab * dt;
                       gdt[xe] += dab * av[l] + g * bv[mm * state + n] * ue;
                       gb[mm * state + n] += g * dt * ue;
                       gu[xe] += g * dt * bv[mm * state + n];
                       carry[l] = g * ab;
                     }
                   }
                 }
                 auto accumulate = [](const Tensor& t, const std::vector<double>& g) {
                   if (!t.requires_grad()) return;
                   auto buf = t.grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
                 };
                 accumulate(u, gu);
                 accumulate(delta, gdt);
                 accumulate(a, ga);
                 accumulate(b, gb);
                 accumulate(c, gc);
                 accumulate(d, gd);
               });
  return out;
}

Tensor selective_ssm(const Tensor& x, const SelectiveSsmWeights& w, ScanAlgo algo) {
  if (x.ndim() == 3) {
    std::vector<Tensor> items;
    items.reserve(x.dim(0));
    for (std::size_t b = 0; b < x.dim(0); ++b) items.push_back(selective_ssm(select(x, b), w, algo));
    return stack(items);
  }
  if (x.ndim() != 2) throw DimensionError("selective_ssm: x must be [M×E] or [B×M×E]");
  const std::size_t rank = w.delta_rank(), state = w.state_dim();
  if (w.proj_bc.ndim() != 2 || w.proj_bc.dim(0) != x.dim(1) ||
      w.proj_bc.dim(1) != rank + 2 * state)
    throw DimensionError("selective_ssm: proj_bc " + shape_str(w.proj_bc.shape()) +
                         " inconsistent with x " + shape_str(x.shape()) + ", rank " +
                         std::to_string(rank) + ", N " + std::to_string(state));
  const Tensor proj = matmul(x, w.proj_bc);
  const Tensor dt_low = slice_cols(proj, 0, rank);
  const Tensor bm = slice_cols(proj, rank, rank + state);
  const Tensor cm = slice_cols(proj, rank + state, rank + 2 * state);
  const Tensor delta = softplus(linear(dt_low, w.proj_delta, w.delta_bias));
  const Tensor a = scale(exponential(w.a_log), -1.0);
  return selective_scan(x, delta, a, bm, cm, w.d, algo);
}

}  // namespace rvm::ssm
