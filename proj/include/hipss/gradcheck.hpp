#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "hipss/numerics.hpp"

namespace hipss {

using ScalarFn = std::function<double(std::span<const double>)>;
/// Objective evaluated in extended precision; finite differences of it are
/// formed without rounding back to double.
using ExtendedScalarFn = std::function<long double(std::span<const double>)>;
using GradientFn = std::function<Vector(std::span<const double>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  Vector analytic;
  Vector numeric;
};

/// Central differences against an analytic gradient. Per coordinate the
/// error is |g_fd - g| / (|g_fd| + |g| + 1e-12); the maximum is reported.
/// Throws NumericError if f is non-finite anywhere it is evaluated.
GradCheckResult grad_check(const ScalarFn& f, const GradientFn& gradient, std::span<const double> params,
                           double step = 1e-6);
GradCheckResult grad_check(const ExtendedScalarFn& f, const GradientFn& gradient, std::span<const double> params,
                           double step = 1e-6);

Vector finite_difference_gradient(const ScalarFn& f, std::span<const double> params, double step = 1e-6);
Vector finite_difference_gradient(const ExtendedScalarFn& f, std::span<const double> params, double step = 1e-6);

}  // namespace hipss
