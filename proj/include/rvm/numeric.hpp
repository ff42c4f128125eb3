#pragma once

#include <span>

namespace rvm {

/// Correctly rounded sum of the inputs (Shewchuk partials). Independent of
/// input order, which is what makes position pooling exactly shift-invariant.
double exact_sum(std::span<const double> values);

/// Numerically safe log(1 + e^x).
double softplus_scalar(double x);
double sigmoid_scalar(double x);

}  // namespace rvm
