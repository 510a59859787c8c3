#pragma once

// Dense double-precision kernels. Every forward kernel here has a matching
// recorded op on the tape (tape.hpp) with a hand-written backward rule.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace hipss {

using Vector = std::vector<double>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormEps = 1e-8;

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);

Vector add(std::span<const double> a, std::span<const double> b);
Vector hadamard(std::span<const double> a, std::span<const double> b);
Vector tanh(std::span<const double> x);
Vector sigmoid(std::span<const double> x);
double sigmoid(double x);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> x);

/// Max-subtracted softmax. Throws ShapeError on empty input.
Vector softmax(std::span<const double> logits);

/// Throws DegenerateVector when either norm is below kNormEps.
double cosine(std::span<const double> u, std::span<const double> v);
Vector l2_normalize(std::span<const double> u);
bool is_degenerate(std::span<const double> u);

/// gain * (x - mean) / sqrt(var + kLayerNormEps) + bias. Requires dim >= 2.
Vector layernorm(std::span<const double> x, std::span<const double> gain,
                 std::span<const double> bias);

bool all_finite(std::span<const double> x);

/// Seeded generator with a portable normal sampler (Box-Muller over
/// mt19937_64), so generated data is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double uniform();  // [0, 1)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Vector random_normal(Rng& rng, std::size_t n, double mean, double stddev);
Matrix random_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

}  // namespace hipss
