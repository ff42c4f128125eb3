#include "rvm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rvm/error.hpp"
#include "rvm/numeric.hpp"

namespace rvm {

namespace {

Tensor finish(Tensor out, std::vector<Tensor> inputs, Tape::GradRule rule) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out, std::move(inputs), std::move(rule));
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_ndim(const Tensor& a, std::size_t n, const char* op, const char* arg) {
  if (a.ndim() != n)
    throw DimensionError(std::string(op) + ": " + arg + " must be " + std::to_string(n) +
                         "-d, got " + shape_str(a.shape()));
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish(Tensor(a.shape(), std::move(out)), {a, b},
                [a, b](std::span<const double> g) mutable {
                  if (a.requires_grad()) {
                    auto ga = a.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (b.requires_grad()) {
                    auto gb = b.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish(Tensor(a.shape(), std::move(out)), {a, b},
                [a, b](std::span<const double> g) mutable {
                  if (a.requires_grad()) {
                    auto ga = a.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (b.requires_grad()) {
                    auto gb = b.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish(Tensor(a.shape(), std::move(out)), {a, b},
                [a, b](std::span<const double> g) mutable {
                  auto x = a.data(), y = b.data();
                  if (a.requires_grad()) {
                    auto ga = a.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                  }
                  if (b.requires_grad()) {
                    auto gb = b.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                  }
                });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return finish(Tensor(a.shape(), std::move(out)), {a},
                [a, factor](std::span<const double> g) mutable {
                  auto ga = a.grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += offset;
  return finish(Tensor(a.shape(), std::move(out)), {a}, [a](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor exponential(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  Tensor result(a.shape(), std::move(out));
  return finish(result, {a}, [a, y = result](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    auto yv = y.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  auto in = x.data();
  std::vector<double> out(in.size());
  switch (kind) {
    case Activation::silu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * sigmoid_scalar(in[i]);
      break;
    case Activation::softplus:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus_scalar(in[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_scalar(in[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
  }
  return finish(Tensor(x.shape(), std::move(out)), {x},
                [x, kind](std::span<const double> g) mutable {
                  auto in = x.data();
                  auto gx = x.grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = 0.0;
                    switch (kind) {
                      case Activation::silu: {
                        const double s = sigmoid_scalar(in[i]);
                        d = s * (1.0 + in[i] * (1.0 - s));
                        break;
                      }
                      case Activation::softplus:
                        d = sigmoid_scalar(in[i]);
                        break;
                      case Activation::sigmoid: {
                        const double s = sigmoid_scalar(in[i]);
                        d = s * (1.0 - s);
                        break;
                      }
                      case Activation::relu:
                        d = in[i] > 0.0 ? 1.0 : 0.0;
                        break;
                    }
                    gx[i] += g[i] * d;
                  }
                });
}

// ----------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return finish(Tensor::scalar(s), {a}, [a](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sq_dist(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw DimensionError("sq_dist: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto x = a.data(), y = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return finish(Tensor::scalar(s), {a, b}, [a, b](std::span<const double> g) mutable {
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * (x[i] - y[i]) * g[0];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= 2.0 * (x[i] - y[i]) * g[0];
    }
  });
}

// ------------------------------------------------------------ shape handling

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  return finish(out, {a}, [a](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_ndim(a, 2, "transpose", "a");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return finish(Tensor({cols, rows}, std::move(out)), {a},
                [a, rows, cols](std::span<const double> g) mutable {
                  auto ga = a.grad_buffer();
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j * rows + i];
                });
}

Tensor select(const Tensor& a, std::size_t index) {
  if (a.ndim() < 2) throw DimensionError("select: need at least 2-d, got " + shape_str(a.shape()));
  if (index >= a.dim(0))
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " +
                         shape_str(a.shape()));
  Shape rest(a.shape().begin() + 1, a.shape().end());
  const std::size_t block = shape_numel(rest);
  auto x = a.data().subspan(index * block, block);
  return finish(Tensor(rest, std::vector<double>(x.begin(), x.end())), {a},
                [a, index, block](std::span<const double> g) mutable {
                  auto ga = a.grad_buffer().subspan(index * block, block);
                  for (std::size_t i = 0; i < block; ++i) ga[i] += g[i];
                });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& inner = parts[0].shape();
  for (const auto& p : parts)
    if (p.shape() != inner)
      throw DimensionError("stack: shape mismatch " + shape_str(inner) + " vs " +
                           shape_str(p.shape()));
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  const std::size_t block = shape_numel(inner);
  return finish(Tensor(std::move(shape), std::move(out)), inputs,
                [inputs, block](std::span<const double> g) mutable {
                  for (std::size_t p = 0; p < inputs.size(); ++p) {
                    if (!inputs[p].requires_grad()) continue;
                    auto gp = inputs[p].grad_buffer();
                    for (std::size_t i = 0; i < block; ++i) gp[i] += g[p * block + i];
                  }
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_ndim(p, 2, "concat_cols", "part");
    if (p.dim(0) != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    auto x = p.data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(x.begin() + i * c, c, out.begin() + i * cols + offset);
    offset += c;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish(Tensor({rows, cols}, std::move(out)), inputs,
                [inputs, rows, cols](std::span<const double> g) mutable {
                  std::size_t offset = 0;
                  for (auto& p : inputs) {
                    const std::size_t c = p.dim(1);
                    if (p.requires_grad()) {
                      auto gp = p.grad_buffer();
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                          gp[i * c + j] += g[i * cols + offset + j];
                    }
                    offset += c;
                  }
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_ndim(a, 2, "slice_cols", "a");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (begin >= end || end > cols)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + shape_str(a.shape()));
  const std::size_t width = end - begin;
  auto x = a.data();
  std::vector<double> out(rows * width);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(x.begin() + i * cols + begin, width, out.begin() + i * width);
  return finish(Tensor({rows, width}, std::move(out)), {a},
                [a, rows, cols, begin, width](std::span<const double> g) mutable {
                  auto ga = a.grad_buffer();
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < width; ++j)
                      ga[i * cols + begin + j] += g[i * width + j];
                });
}

// -------------------------------------------------------------- linear algebra

namespace {

// c[m×n] += a[m×k] · b[k×n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul", "a");
  require_ndim(b, 2, "matmul", "b");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.ptr(), b.ptr(), out.data(), m, k, n);
  return finish(Tensor({m, n}, std::move(out)), {a, b},
                [a, b, m, k, n](std::span<const double> g) mutable {
                  if (a.requires_grad()) {
                    // dA = dC · Bᵀ
                    auto ga = a.grad_buffer();
                    auto bv = b.data();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += s;
                      }
                  }
                  if (b.requires_grad()) {
                    // dB = Aᵀ · dC
                    auto gb = b.grad_buffer();
                    auto av = a.data();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                      }
                  }
                });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_ndim(x, 2, "add_row_bias", "x");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.numel() != cols)
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  return finish(Tensor(x.shape(), std::move(out)), {x, bias},
                [x, bias, rows, cols](std::span<const double> g) mutable {
                  if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  }
                  if (bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

// ---------------------------------------------------------------- convolution

Tensor conv_vertical(const Tensor& x, const Tensor& weight, std::size_t stride_h,
                     const Tensor& bias) {
  require_ndim(x, 3, "conv_vertical", "x");
  require_ndim(weight, 4, "conv_vertical", "weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw DimensionError("conv_vertical: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(x.shape()));
  if (weight.dim(3) != 1)
    throw ConfigError("conv_vertical: kernel width must be 1, got " +
                      std::to_string(weight.dim(3)));
  if (stride_h == 0) throw ConfigError("conv_vertical: stride must be >= 1");
  if (k > h)
    throw ConfigError("conv_vertical: kernel height " + std::to_string(k) +
                      " exceeds input height " + std::to_string(h));
  if (bias.defined() && bias.numel() != cout)
    throw DimensionError("conv_vertical: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  const std::size_t ho = (h - k) / stride_h + 1;
  auto xv = x.data();
  auto wv = weight.data();
  std::vector<double> out(cout * ho * w, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    double* oplane = out.data() + o * ho * w;
    if (bias.defined())
      std::fill(oplane, oplane + ho * w, bias.data()[o]);
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t t = 0; t < k; ++t) {
        const double wt = wv[(o * cin + c) * k + t];
        for (std::size_t i = 0; i < ho; ++i) {
          const double* xrow = xv.data() + (c * h + i * stride_h + t) * w;
          double* orow = oplane + i * w;
          for (std::size_t j = 0; j < w; ++j) orow[j] += wt * xrow[j];
        }
      }
  }
  return finish(Tensor({cout, ho, w}, std::move(out)), {x, weight, bias},
                [x, weight, bias, cin, h, w, cout, k, ho, stride_h](
                    std::span<const double> g) mutable {
                  auto xv = x.data();
                  auto wv = weight.data();
                  if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    for (std::size_t o = 0; o < cout; ++o)
                      for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t t = 0; t < k; ++t) {
                          const double wt = wv[(o * cin + c) * k + t];
                          for (std::size_t i = 0; i < ho; ++i) {
                            const double* grow = g.data() + (o * ho + i) * w;
                            double* gxrow = gx.data() + (c * h + i * stride_h + t) * w;
                            for (std::size_t j = 0; j < w; ++j) gxrow[j] += wt * grow[j];
                          }
                        }
                  }
                  if (weight.requires_grad()) {
                    auto gw = weight.grad_buffer();
                    for (std::size_t o = 0; o < cout; ++o)
                      for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t t = 0; t < k; ++t) {
                          double s = 0.0;
                          for (std::size_t i = 0; i < ho; ++i) {
                            const double* grow = g.data() + (o * ho + i) * w;
                            const double* xrow = xv.data() + (c * h + i * stride_h + t) * w;
                            for (std::size_t j = 0; j < w; ++j) s += grow[j] * xrow[j];
                          }
                          gw[(o * cin + c) * k + t] += s;
                        }
                  }
                  if (bias.defined() && bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t o = 0; o < cout; ++o) {
                      double s = 0.0;
                      for (std::size_t i = 0; i < ho * w; ++i) s += g[o * ho * w + i];
                      gb[o] += s;
                    }
                  }
                });
}

Tensor conv1d_circular(const Tensor& x, const Tensor& weight) {
  require_ndim(x, 2, "conv1d_circular", "x");
  require_ndim(weight, 3, "conv1d_circular", "weight");
  const std::size_t cin = x.dim(0), m = x.dim(1);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw DimensionError("conv1d_circular: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(x.shape()));
  if (k % 2 == 0)
    throw ConfigError("conv1d_circular: kernel length must be odd, got " + std::to_string(k));
  const std::size_t r = (k - 1) / 2;
  auto xv = x.data();
  auto wv = weight.data();
  std::vector<double> out(cout * m, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t t = 0; t < k; ++t) {
        const double wt = wv[(o * cin + c) * k + t];
        for (std::size_t i = 0; i < m; ++i)
          out[o * m + i] += wt * xv[c * m + (i + r + m * k - t) % m];
      }
  return finish(Tensor({cout, m}, std::move(out)), {x, weight},
                [x, weight, cin, m, cout, k, r](std::span<const double> g) mutable {
                  auto xv = x.data();
                  auto wv = weight.data();
                  for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t c = 0; c < cin; ++c)
                      for (std::size_t t = 0; t < k; ++t) {
                        const std::size_t wi = (o * cin + c) * k + t;
                        double s = 0.0;
                        for (std::size_t i = 0; i < m; ++i) {
                          const std::size_t src = c * m + (i + r + m * k - t) % m;
                          if (x.requires_grad()) x.grad_buffer()[src] += wv[wi] * g[o * m + i];
                          s += g[o * m + i] * xv[src];
                        }
                        if (weight.requires_grad()) weight.grad_buffer()[wi] += s;
                      }
                });
}

Tensor conv1d_circular_depthwise(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_ndim(x, 2, "conv1d_circular_depthwise", "x");
  require_ndim(weight, 2, "conv1d_circular_depthwise", "weight");
  const std::size_t m = x.dim(0), c = x.dim(1), k = weight.dim(1);
  if (weight.dim(0) != c)
    throw DimensionError("conv1d_circular_depthwise: weight " + shape_str(weight.shape()) +
                         " does not match input " + shape_str(x.shape()));
  if (k % 2 == 0)
    throw ConfigError("conv1d_circular_depthwise: kernel length must be odd, got " +
                      std::to_string(k));
  if (bias.defined() && bias.numel() != c)
    throw DimensionError("conv1d_circular_depthwise: bias " + shape_str(bias.shape()));
  const std::size_t r = (k - 1) / 2;
  auto xv = x.data();
  auto wv = weight.data();
  std::vector<double> out(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * c;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), orow);
    for (std::size_t t = 0; t < k; ++t) {
      const double* xrow = xv.data() + ((i + r + m * k - t) % m) * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += wv[ch * k + t] * xrow[ch];
    }
  }
  return finish(Tensor({m, c}, std::move(out)), {x, weight, bias},
                [x, weight, bias, m, c, k, r](std::span<const double> g) mutable {
                  auto xv = x.data();
                  auto wv = weight.data();
                  std::span<double> gx, gw;
                  if (x.requires_grad()) gx = x.grad_buffer();
                  if (weight.requires_grad()) gw = weight.grad_buffer();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                      const std::size_t src = ((i + r + m * k - t) % m) * c;
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const double gi = g[i * c + ch];
                        if (!gx.empty()) gx[src + ch] += wv[ch * k + t] * gi;
                        if (!gw.empty()) gw[ch * k + t] += xv[src + ch] * gi;
                      }
                    }
                  if (bias.defined() && bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += g[i * c + ch];
                  }
                });
}

// ------------------------------------------------------------- sequence ops

Tensor roll_rows(const Tensor& x, std::size_t start) {
  require_ndim(x, 2, "roll_rows", "x");
  const std::size_t m = x.dim(0), c = x.dim(1);
  if (start >= m)
    throw ContractError("roll_rows: start index " + std::to_string(start) +
                        " outside [0, " + std::to_string(m) + ")");
  auto xv = x.data();
  std::vector<double> out(m * c);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + ((i + start) % m) * c, c, out.begin() + i * c);
  return finish(Tensor({m, c}, std::move(out)), {x},
                [x, m, c, start](std::span<const double> g) mutable {
                  auto gx = x.grad_buffer();
                  for (std::size_t i = 0; i < m; ++i) {
                    const std::size_t src = ((i + start) % m) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) gx[src + ch] += g[i * c + ch];
                  }
                });
}

Tensor flip_rows(const Tensor& x) {
  require_ndim(x, 2, "flip_rows", "x");
  const std::size_t m = x.dim(0), c = x.dim(1);
  auto xv = x.data();
  std::vector<double> out(m * c);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + (m - 1 - i) * c, c, out.begin() + i * c);
  return finish(Tensor({m, c}, std::move(out)), {x}, [x, m, c](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) gx[(m - 1 - i) * c + ch] += g[i * c + ch];
  });
}

Tensor maxpool_rows_circular(const Tensor& x, std::size_t kernel) {
  require_ndim(x, 2, "maxpool_rows_circular", "x");
  if (kernel % 2 == 0)
    throw ConfigError("maxpool_rows_circular: kernel must be odd, got " + std::to_string(kernel));
  const std::size_t m = x.dim(0), c = x.dim(1), r = (kernel - 1) / 2;
  auto xv = x.data();
  std::vector<double> out(m * c);
  std::vector<std::size_t> argmax(m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = ((i + m * kernel - r) % m) * c + ch;
      for (std::size_t t = 1; t < kernel; ++t) {
        const std::size_t idx = ((i + t + m * kernel - r) % m) * c + ch;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[i * c + ch] = xv[best];
      argmax[i * c + ch] = best;
    }
  return finish(Tensor({m, c}, std::move(out)), {x},
                [x, argmax = std::move(argmax)](std::span<const double> g) mutable {
                  auto gx = x.grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_ndim(x, 2, "layer_norm_rows", "x");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm_rows: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return finish(Tensor({m, d}, std::move(out)), {x, gain, bias},
                [x, gain, bias, m, d, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](std::span<const double> g) mutable {
                  auto gv = gain.data();
                  if (gain.requires_grad()) {
                    auto gg = gain.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
                  }
                  if (bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                  }
                  if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    const double n = static_cast<double>(d);
                    for (std::size_t i = 0; i < m; ++i) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[i * d + j] * gv[j];
                        s1 += gh;
                        s2 += gh * xhat[i * d + j];
                      }
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[i * d + j] * gv[j];
                        gx[i * d + j] += inv_std[i] * (gh - s1 / n - xhat[i * d + j] * s2 / n);
                      }
                    }
                  }
                });
}

Tensor softmax_rows(const Tensor& x) {
  require_ndim(x, 2, "softmax_rows", "x");
  const std::size_t m = x.dim(0), k = x.dim(1);
  auto xv = x.data();
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(row[j] - mx);
      z += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  Tensor y({m, k}, std::move(out));
  return finish(y, {x}, [x, y, m, k](std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    auto yv = y.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * yv[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += yv[i * k + j] * (g[i * k + j] - dot);
    }
  });
}

namespace {

// Scales `rows` blocks of length `cols` to unit norm; zero blocks stay zero.
Tensor normalize_blocks(const Tensor& x, std::size_t rows, std::size_t cols) {
  auto xv = x.data();
  std::vector<double> out(rows * cols, 0.0);
  std::vector<double> norms(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += xv[i * cols + j] * xv[i * cols + j];
    norms[i] = std::sqrt(s);
    if (norms[i] > 0.0)
      for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xv[i * cols + j] / norms[i];
  }
  Tensor y(x.shape(), std::move(out));
  return finish(y, {x}, [x, y, rows, cols, norms = std::move(norms)](
                            std::span<const double> g) mutable {
    auto gx = x.grad_buffer();
    auto yv = y.data();
    for (std::size_t i = 0; i < rows; ++i) {
      if (norms[i] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += yv[i * cols + j] * g[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        gx[i * cols + j] += (g[i * cols + j] - yv[i * cols + j] * dot) / norms[i];
    }
  });
}

}  // namespace

Tensor normalize_rows(const Tensor& x) {
  require_ndim(x, 2, "normalize_rows", "x");
  return normalize_blocks(x, x.dim(0), x.dim(1));
}

Tensor l2_normalize(const Tensor& x) { return normalize_blocks(x, 1, x.numel()); }

Tensor vlad_aggregate(const Tensor& x, const Tensor& alpha, const Tensor& centers) {
  require_ndim(x, 2, "vlad_aggregate", "x");
  require_ndim(alpha, 2, "vlad_aggregate", "alpha");
  require_ndim(centers, 2, "vlad_aggregate", "centers");
  const std::size_t m = x.dim(0), d = x.dim(1), k = centers.dim(0);
  if (alpha.dim(0) != m || alpha.dim(1) != k || centers.dim(1) != d)
    throw DimensionError("vlad_aggregate: x " + shape_str(x.shape()) + ", alpha " +
                         shape_str(alpha.shape()) + ", centers " + shape_str(centers.shape()));
  auto xv = x.data();
  auto av = alpha.data();
  auto cv = centers.data();
  std::vector<double> out(k * d);
  std::vector<double> terms(m);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < m; ++i)
        terms[i] = av[i * k + c] * (xv[i * d + j] - cv[c * d + j]);
      out[c * d + j] = exact_sum(terms);
    }
  return finish(Tensor({k, d}, std::move(out)), {x, alpha, centers},
                [x, alpha, centers, m, d, k](std::span<const double> g) mutable {
                  auto xv = x.data();
                  auto av = alpha.data();
                  auto cv = centers.data();
                  if (alpha.requires_grad()) {
                    auto ga = alpha.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t c = 0; c < k; ++c) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < d; ++j)
                          s += g[c * d + j] * (xv[i * d + j] - cv[c * d + j]);
                        ga[i * k + c] += s;
                      }
                  }
                  if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t c = 0; c < k; ++c) {
                        const double a = av[i * k + c];
                        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += a * g[c * d + j];
                      }
                  }
                  if (centers.requires_grad()) {
                    auto gc = centers.grad_buffer();
                    for (std::size_t c = 0; c < k; ++c) {
                      double mass = 0.0;
                      for (std::size_t i = 0; i < m; ++i) mass += av[i * k + c];
                      for (std::size_t j = 0; j < d; ++j) gc[c * d + j] -= mass * g[c * d + j];
                    }
                  }
                });
}

}  // namespace rvm
