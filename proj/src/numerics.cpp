#include "hipss/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hipss/errors.hpp"

namespace hipss {

namespace {

void require_same(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": size mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_same(rows * cols, data_.size(), "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same(a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  require_same(a.cols(), x.size(), "matvec");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size(), "add");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector hadamard(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size(), "hadamard");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Vector tanh(std::span<const double> x) {
  Vector out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return std::tanh(v); });
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(std::span<const double> x) {
  Vector out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](double v) { return sigmoid(v); });
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

bool is_degenerate(std::span<const double> u) { return norm(u) < kNormEps; }

double cosine(std::span<const double> u, std::span<const double> v) {
  require_same(u.size(), v.size(), "cosine");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu < kNormEps || nv < kNormEps) throw DegenerateVector("cosine: near-zero norm");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

Vector l2_normalize(std::span<const double> u) {
  const double n = norm(u);
  if (n < kNormEps) throw DegenerateVector("l2_normalize: near-zero norm");
  Vector out(u.begin(), u.end());
  for (double& v : out) v /= n;
  return out;
}

Vector layernorm(std::span<const double> x, std::span<const double> gain,
                 std::span<const double> bias) {
  if (x.size() < 2) throw ShapeError("layernorm: dim must be >= 2");
  require_same(x.size(), gain.size(), "layernorm gain");
  require_same(x.size(), bias.size(), "layernorm bias");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * ((x[i] - mean) * inv_std) + bias[i];
  return out;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = engine_.max() - engine_.max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

Vector random_normal(Rng& rng, std::size_t n, double mean, double stddev) {
  Vector out(n);
  for (double& v : out) v = rng.normal(mean, stddev);
  return out;
}

Matrix random_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  return Matrix(rows, cols, random_normal(rng, rows * cols, 0.0, stddev));
}

}  // namespace hipss
