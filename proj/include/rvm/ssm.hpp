#pragma once

#include <cstddef>
#include <vector>

#include "rvm/tensor.hpp"

// Diagonal state-space primitives: discretization, sequential and parallel
// scans, the time-invariant convolution kernel and the input-dependent
// (selective) SSM used inside the sequence block.
//
// Layout conventions: batch B, length M, channels E, state N.
//   delta, x, y : [B×M×E]
//   A           : [E×N]  (diagonal evolution, strictly negative)
//   B, C        : [B×M×N] selective, or [N] time-invariant
namespace rvm::ssm {

enum class Discretization { zoh, euler };
enum class ScanAlgo { sequential, parallel };

/// Per-step discrete operators, each stored as [B×M×E×N].
struct DiscreteSsm {
  std::size_t batch = 0, length = 0, channels = 0, state = 0;
  std::vector<double> abar;
  std::vector<double> bbar;

  std::size_t index(std::size_t b, std::size_t m, std::size_t e, std::size_t n) const {
    return ((b * length + m) * channels + e) * state + n;
  }
  bool time_invariant() const;
};

/// zoh:   Ā = exp(ΔA), B̄ = (exp(ΔA) - 1)/A · B, with B̄ = Δ·B where |A| < 1e-12.
/// euler: Ā = exp(ΔA), B̄ = Δ·B.
/// `b` may be [B×M×N] or [N]. Throws ContractError on a nonpositive Δ.
DiscreteSsm discretize(const Tensor& delta, const Tensor& a, const Tensor& b,
                       Discretization mode);

/// h_k = Ā_k h_{k-1} + B̄_k x_k (h_{-1} = 0), y_k = C_k·h_k + D x_k.
Tensor scan_sequential(const DiscreteSsm& dssm, const Tensor& c, const Tensor& d,
                       const Tensor& x);

/// Same recurrence evaluated as a Blelloch up/down sweep over the affine pairs
/// (Ā_k, B̄_k x_k). The combination tree depends only on M, so results do not
/// vary with the thread count.
Tensor scan_parallel(const DiscreteSsm& dssm, const Tensor& c, const Tensor& d, const Tensor& x,
                     unsigned threads = 1);

/// Affine map h -> a·h + b; compose(later, earlier) applies `earlier` first.
struct Affine {
  double a = 1.0;
  double b = 0.0;
};
inline Affine compose(Affine later, Affine earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

/// K[e][m] = Σ_n C_n Ā[e,n]^m B̄[e,n]; abar/bbar are [E×N], c is [N].
Tensor lti_kernel(const Tensor& abar, const Tensor& bbar, const Tensor& c, std::size_t length);
/// Kernel of a discretized system; throws ContractError when its operators vary over steps.
Tensor lti_kernel(const DiscreteSsm& dssm, const Tensor& c, std::size_t length);

/// y[m][e] = Σ_{j<=m} K[e][m-j] x[j][e] + D[e] x[m][e]; x is [M×E], kernel [E×M].
Tensor causal_conv(const Tensor& x, const Tensor& kernel, const Tensor& d);

/// Differentiable selective scan for one sequence with euler B̄.
/// u, delta: [M×E]; a: [E×N]; b, c: [M×N]; d: [E]. Returns y: [M×E].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d, ScanAlgo algo = ScanAlgo::parallel);

/// Learned projections of one selective SSM branch.
struct SelectiveSsmWeights {
  Tensor proj_bc;     // [E × (R + 2N)]  -> (Δ-rank slice, B, C)
  Tensor proj_delta;  // [R × E]
  Tensor delta_bias;  // [E]
  Tensor a_log;       // [E × N], A = -exp(a_log)
  Tensor d;           // [E]

  std::size_t delta_rank() const { return proj_delta.dim(0); }
  std::size_t state_dim() const { return a_log.dim(1); }
};

/// Δ = softplus(proj_delta · slice + bias), B and C from the split projection,
/// euler discretization, scan, plus D skip. x is [M×E] or [B×M×E].
Tensor selective_ssm(const Tensor& x, const SelectiveSsmWeights& w,
                     ScanAlgo algo = ScanAlgo::parallel);

}  // namespace rvm::ssm
