#include "hipss/gradcheck.hpp"

#include <cmath>
#include <string>

#include "hipss/errors.hpp"

namespace hipss {

namespace {

template <typename Fn>
auto checked(const Fn& f, std::span<const double> x) {
  const auto v = f(x);
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

// The divisor is the distance between the rounded evaluation points, so the
// quotient is the exact secant slope of f between them.
template <typename Fn>
Vector central_differences(const Fn& f, std::span<const double> params, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be > 0");
  Vector x(params.begin(), params.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    const double hi = orig + step;
    const double lo = orig - step;
    x[i] = hi;
    const auto fp = checked(f, x);
    x[i] = lo;
    const auto fm = checked(f, x);
    x[i] = orig;
    g[i] = static_cast<double>((fp - fm) / (static_cast<decltype(fp)>(hi) - lo));
  }
  return g;
}

template <typename Fn>
GradCheckResult check(const Fn& f, const GradientFn& gradient, std::span<const double> params, double step) {
  checked(f, params);
  GradCheckResult r;
  r.analytic = gradient(params);
  if (r.analytic.size() != params.size()) throw ShapeError("grad_check: gradient length mismatch");
  if (!all_finite(r.analytic)) throw NumericError("grad_check: non-finite analytic gradient");
  r.numeric = central_differences(f, params, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double err = std::abs(r.numeric[i] - r.analytic[i]) /
                       (std::abs(r.numeric[i]) + std::abs(r.analytic[i]) + 1e-12);
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace

Vector finite_difference_gradient(const ScalarFn& f, std::span<const double> params, double step) {
  return central_differences(f, params, step);
}

Vector finite_difference_gradient(const ExtendedScalarFn& f, std::span<const double> params, double step) {
  return central_differences(f, params, step);
}

GradCheckResult grad_check(const ScalarFn& f, const GradientFn& gradient, std::span<const double> params,
                           double step) {
  return check(f, gradient, params, step);
}

GradCheckResult grad_check(const ExtendedScalarFn& f, const GradientFn& gradient, std::span<const double> params,
                           double step) {
  return check(f, gradient, params, step);
}

}  // namespace hipss
