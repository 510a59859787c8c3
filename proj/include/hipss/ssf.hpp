#pragma once

// Scale-and-shift feature adapters: y = gamma * x + beta at selected sites of
// a frozen block stack, depth-selective attachment, and folding the adapters
// back into the preceding affine layer for adapter-free inference.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hipss/numerics.hpp"

namespace hipss {

struct SsfParams {
  Vector gamma;
  Vector beta;

  static SsfParams identity(std::size_t dim);
  std::size_t dim() const { return gamma.size(); }
  bool is_identity() const;
  bool operator==(const SsfParams&) const = default;
};

enum class SiteKind { kPostLayerNorm, kPostMlp };

inline constexpr std::size_t kSitesPerBlock = 2;

std::string_view to_string(SiteKind kind);
SiteKind site_kind_from_string(std::string_view name);

struct SsfSite {
  std::size_t block = 1;  // 1-based, 1..L
  SiteKind kind = SiteKind::kPostLayerNorm;
  SsfParams params;
  bool trainable = false;
};

Vector ssf_forward(std::span<const double> x, const SsfParams& p);

struct SsfCotangents {
  Vector x;
  Vector gamma;
  Vector beta;
};
SsfCotangents ssf_vjp(std::span<const double> x, const SsfParams& p, std::span<const double> cotangent);

/// Trainable blocks {L - depth + 1, ..., L}, ascending, 1-based.
std::vector<std::size_t> attach_depth(std::size_t blocks, std::size_t depth);

/// gamma ~ N(1, sigma^2), beta ~ N(0, sigma^2); deterministic in seed.
SsfParams init_ssf(std::uint64_t seed, std::size_t dim, double sigma);

/// One post-layernorm and one post-MLP site per block, in block order.
/// Sites inside the tuned depth get init_ssf draws and are trainable; the
/// rest carry frozen identity parameters.
std::vector<SsfSite> make_sites(std::size_t blocks, std::size_t depth, std::size_t dim,
                                std::uint64_t seed, double sigma);

/// Affine targets an adapter can be folded into.
struct AffineLayerNorm {
  Vector gain;
  Vector bias;
};

struct AffineLinear {
  Matrix weight;  // out x in
  Vector bias;
};

/// gain' = gamma * gain, bias' = gamma * bias + beta. Site must be post-layernorm.
AffineLayerNorm merge_reparam(const AffineLayerNorm& layer, const SsfSite& site);
/// W' = diag(gamma) W, b' = gamma * b + beta. Site must be post-MLP.
AffineLinear merge_reparam(const AffineLinear& layer, const SsfSite& site);

struct ParamCountConfig {
  std::size_t dim = 64;          // D_t = D_v
  std::size_t hidden = 32;       // D_h
  std::size_t depth = 2;         // d_s
  std::size_t sites_per_block = kSitesPerBlock;
  bool attention = true;         // include both gated-attention blocks
};

/// 2 * D_t * sites_per_block * d_s  +  2 * (2 * D_h * D_v + D_h).
std::size_t count_trainable(const ParamCountConfig& config);

}  // namespace hipss
