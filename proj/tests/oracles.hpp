#pragma once

// Independent reference implementations used only by tests: plain scalar
// loops, no shared kernels with the library.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "hipss/hierpool.hpp"
#include "hipss/numerics.hpp"

namespace oracle {

using hipss::Matrix;
using hipss::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Vector softmax(const Vector& z) {
  Vector e(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (e[i] = std::exp(z[i]));
  for (double& v : e) v /= total;
  return e;
}

inline double cosine(const Vector& a, const Vector& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// Three-branch refinement written out from its definition.
inline double refine(double c, double lambda, double alpha) {
  if (c > alpha) return lambda * c;
  if (c > 0.0) return c;
  return 0.0;
}

inline double gated_logit(const hipss::GatedAttention& g, const Vector& h) {
  double z = 0.0;
  for (std::size_t k = 0; k < g.w.size(); ++k) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      a += g.v1(k, i) * h[i];
      b += g.v2(k, i) * h[i];
    }
    z += g.w[k] * std::tanh(a) * (1.0 / (1.0 + std::exp(-b)));
  }
  return z;
}

struct Pooled {
  Vector embedding;
  Vector weights;
};

inline Pooled attention_pool(const std::vector<Vector>& items, const hipss::GatedAttention& g,
                             const std::optional<Vector>& text, double lambda, double alpha) {
  Vector logits;
  for (const Vector& h : items) {
    double s = 0.0;
    if (text) s = refine(cosine(h, *text), lambda, alpha);
    logits.push_back(gated_logit(g, h) + s);
  }
  Pooled p{Vector(items.front().size(), 0.0), softmax(logits)};
  for (std::size_t j = 0; j < items.size(); ++j)
    for (std::size_t i = 0; i < p.embedding.size(); ++i) p.embedding[i] += p.weights[j] * items[j][i];
  return p;
}

struct SlidePooled {
  Vector embedding;
  Vector region_weights;
  std::vector<Pooled> regions;
};

inline SlidePooled wsi(const hipss::SlideBag& bag, const hipss::AttentionParams& params,
                       const std::optional<Vector>& text, double lambda, double alpha) {
  SlidePooled out;
  std::vector<Vector> rs;
  for (const auto& region : bag.regions) {
    std::vector<Vector> hs;
    for (const auto& inst : region.instances) hs.push_back(inst.embedding);
    out.regions.push_back(attention_pool(hs, params.region, text, lambda, alpha));
    rs.push_back(out.regions.back().embedding);
  }
  Pooled top = attention_pool(rs, params.slide, text, lambda, alpha);
  out.embedding = top.embedding;
  out.region_weights = top.weights;
  return out;
}

/// O(n^2) pair counting.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  return wins / pairs;
}

inline Vector central_difference(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-6) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / (std::abs(a[i]) + std::abs(b[i]) + 1e-12));
  return worst;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace oracle
