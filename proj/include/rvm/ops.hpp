#pragma once

#include <cstddef>
#include <span>

#include "rvm/tensor.hpp"

// Differentiable tensor operations. Every op records a gradient rule on the
// active tape when one of its inputs requires grad. Broadcasting is limited
// to scalar factors and row-vector biases; any other extent mismatch throws
// DimensionError.
namespace rvm {

enum class Activation { silu, softplus, sigmoid, relu };

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor exponential(const Tensor& a);
Tensor activation(const Tensor& x, Activation kind);
inline Tensor silu(const Tensor& x) { return activation(x, Activation::silu); }
inline Tensor softplus(const Tensor& x) { return activation(x, Activation::softplus); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Squared Euclidean distance between equal-shape tensors, as a scalar.
Tensor sq_dist(const Tensor& a, const Tensor& b);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
/// Slice along the first axis; the result drops that axis.
Tensor select(const Tensor& a, std::size_t index);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// x[M×in] · weight[in×out] (+ bias[out] when defined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Convolutions.
/// x[C_in×H×W], weight[C_out×C_in×k×1] -> [C_out×H'×W], H' = (H-k)/stride + 1.
/// Width is never mixed: output column j reads only input column j.
Tensor conv_vertical(const Tensor& x, const Tensor& weight, std::size_t stride_h,
                     const Tensor& bias = {});
/// x[C×M], weight[C_out×C×k] with odd k, wrap-around padding.
Tensor conv1d_circular(const Tensor& x, const Tensor& weight);
/// Per-channel circular conv on a position-major sequence x[M×C],
/// weight[C×k] with odd k, optional bias[C].
Tensor conv1d_circular_depthwise(const Tensor& x, const Tensor& weight,
                                 const Tensor& bias = {});

// Sequence ops on position-major [M×C] tensors.
/// Row i of the result is row (i + start) mod M of the input.
Tensor roll_rows(const Tensor& x, std::size_t start);
Tensor flip_rows(const Tensor& x);
/// Same-length max pool along rows with circular padding; kernel odd.
Tensor maxpool_rows_circular(const Tensor& x, std::size_t kernel);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
/// Each row scaled to unit L2 norm; all-zero rows stay zero.
Tensor normalize_rows(const Tensor& x);
/// Whole tensor scaled to unit L2 norm; an all-zero tensor stays zero.
Tensor l2_normalize(const Tensor& x);

/// VLAD residual aggregation: out[k][d] = sum_m alpha[m][k] * (x[m][d] - centers[k][d]).
/// The position sum is exact (correctly rounded), so the result does not
/// depend on position order.
Tensor vlad_aggregate(const Tensor& x, const Tensor& alpha, const Tensor& centers);

}  // namespace rvm
