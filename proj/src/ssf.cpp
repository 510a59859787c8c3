#include "hipss/ssf.hpp"

#include <algorithm>
#include <string>

#include "hipss/errors.hpp"

namespace hipss {

namespace {

void check_dims(const SsfParams& p, std::size_t n, const char* what) {
  if (p.gamma.size() != n || p.beta.size() != n) {
    throw ShapeError(std::string(what) + ": adapter dim " + std::to_string(p.gamma.size()) +
                     " does not match feature dim " + std::to_string(n));
  }
}

}  // namespace

SsfParams SsfParams::identity(std::size_t dim) { return {Vector(dim, 1.0), Vector(dim, 0.0)}; }

bool SsfParams::is_identity() const {
  return std::all_of(gamma.begin(), gamma.end(), [](double g) { return g == 1.0; }) &&
         std::all_of(beta.begin(), beta.end(), [](double b) { return b == 0.0; });
}

std::string_view to_string(SiteKind kind) {
  return kind == SiteKind::kPostLayerNorm ? "post_layernorm" : "post_mlp";
}

SiteKind site_kind_from_string(std::string_view name) {
  if (name == "post_layernorm") return SiteKind::kPostLayerNorm;
  if (name == "post_mlp") return SiteKind::kPostMlp;
  throw DataError("unknown SSF site kind '" + std::string(name) + "'");
}

Vector ssf_forward(std::span<const double> x, const SsfParams& p) {
  check_dims(p, x.size(), "ssf_forward");
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = p.gamma[i] * x[i] + p.beta[i];
  return y;
}

SsfCotangents ssf_vjp(std::span<const double> x, const SsfParams& p, std::span<const double> cotangent) {
  check_dims(p, x.size(), "ssf_vjp");
  if (cotangent.size() != x.size()) throw ShapeError("ssf_vjp: cotangent size mismatch");
  SsfCotangents out{Vector(x.size()), Vector(x.size()), Vector(cotangent.begin(), cotangent.end())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.x[i] = cotangent[i] * p.gamma[i];
    out.gamma[i] = cotangent[i] * x[i];
  }
  return out;
}

std::vector<std::size_t> attach_depth(std::size_t blocks, std::size_t depth) {
  if (depth < 1 || depth > blocks) {
    throw ConfigError("depth d_s=" + std::to_string(depth) + " must lie in [1, " +
                      std::to_string(blocks) + "]");
  }
  std::vector<std::size_t> out;
  for (std::size_t b = blocks - depth + 1; b <= blocks; ++b) out.push_back(b);
  return out;
}

SsfParams init_ssf(std::uint64_t seed, std::size_t dim, double sigma) {
  if (sigma < 0.0) throw ConfigError("sigma_init must be >= 0");
  Rng rng(seed);
  SsfParams p;
  p.gamma = random_normal(rng, dim, 1.0, sigma);
  p.beta = random_normal(rng, dim, 0.0, sigma);
  if (sigma == 0.0) p = SsfParams::identity(dim);
  return p;
}

std::vector<SsfSite> make_sites(std::size_t blocks, std::size_t depth, std::size_t dim,
                                std::uint64_t seed, double sigma) {
  const auto tuned = attach_depth(blocks, depth);
  std::vector<SsfSite> sites;
  sites.reserve(blocks * kSitesPerBlock);
  for (std::size_t b = 1; b <= blocks; ++b) {
    const bool trainable = std::find(tuned.begin(), tuned.end(), b) != tuned.end();
    for (SiteKind kind : {SiteKind::kPostLayerNorm, SiteKind::kPostMlp}) {
      SsfSite site{b, kind, SsfParams::identity(dim), trainable};
      if (trainable) {
        const std::uint64_t site_seed = seed * 1000003ULL + b * kSitesPerBlock +
                                        (kind == SiteKind::kPostMlp ? 1 : 0);
        site.params = init_ssf(site_seed, dim, sigma);
      }
      sites.push_back(std::move(site));
    }
  }
  return sites;
}

AffineLayerNorm merge_reparam(const AffineLayerNorm& layer, const SsfSite& site) {
  if (site.kind != SiteKind::kPostLayerNorm) {
    throw ConfigError("merge_reparam: a post_mlp site has no layernorm to fold into");
  }
  check_dims(site.params, layer.gain.size(), "merge_reparam");
  AffineLayerNorm out{Vector(layer.gain.size()), Vector(layer.bias.size())};
  for (std::size_t i = 0; i < out.gain.size(); ++i) {
    out.gain[i] = site.params.gamma[i] * layer.gain[i];
    out.bias[i] = site.params.gamma[i] * layer.bias[i] + site.params.beta[i];
  }
  return out;
}

AffineLinear merge_reparam(const AffineLinear& layer, const SsfSite& site) {
  if (site.kind != SiteKind::kPostMlp) {
    throw ConfigError("merge_reparam: a post_layernorm site has no linear output to fold into");
  }
  check_dims(site.params, layer.weight.rows(), "merge_reparam");
  if (layer.bias.size() != layer.weight.rows()) throw ShapeError("merge_reparam: bias size mismatch");
  AffineLinear out{layer.weight, Vector(layer.bias.size())};
  for (std::size_t r = 0; r < out.weight.rows(); ++r) {
    for (double& w : out.weight.row(r)) w *= site.params.gamma[r];
    out.bias[r] = site.params.gamma[r] * layer.bias[r] + site.params.beta[r];
  }
  return out;
}

std::size_t count_trainable(const ParamCountConfig& config) {
  if (config.depth < 1) throw ConfigError("depth d_s must be >= 1");
  std::size_t total = 2 * config.dim * config.sites_per_block * config.depth;
  if (config.attention) total += 2 * (2 * config.hidden * config.dim + config.hidden);
  return total;
}

}  // namespace hipss
