#include "hipss/textenc.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "hipss/errors.hpp"

namespace hipss {

Matrix build_prompt(const PromptTokens& prompt) {
  const Matrix& reg = prompt.region_tokens;
  const Matrix& sld = prompt.slide_tokens;
  if (reg.rows() == 0 || sld.rows() == 0) {
    throw DataError("prompt for class " + std::to_string(prompt.class_id) + " has an empty token sequence");
  }
  if (reg.cols() != sld.cols()) throw ShapeError("build_prompt: token widths differ");
  Vector data = reg.data();
  data.insert(data.end(), sld.data().begin(), sld.data().end());
  return Matrix(reg.rows() + sld.rows(), reg.cols(), std::move(data));
}

TextEncoderStack TextEncoderStack::build(std::size_t dim, std::size_t num_blocks, std::uint64_t seed) {
  if (dim < 2) throw ConfigError("text encoder dim must be >= 2");
  if (num_blocks < 1) throw ConfigError("text encoder needs at least one block");
  Rng rng(seed);
  const double wstd = 1.0 / std::sqrt(static_cast<double>(dim));
  TextEncoderStack stack;
  stack.dim = dim;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    EncoderBlock blk;
    blk.norm.gain = random_normal(rng, dim, 1.0, 0.1);
    blk.norm.bias = random_normal(rng, dim, 0.0, 0.1);
    blk.w1 = random_normal(rng, dim, dim, wstd);
    blk.b1 = random_normal(rng, dim, 0.0, 0.1);
    blk.out.weight = random_normal(rng, dim, dim, wstd);
    blk.out.bias = random_normal(rng, dim, 0.0, 0.1);
    stack.blocks.push_back(std::move(blk));
  }
  stack.projection = random_normal(rng, dim, dim, wstd);
  return stack;
}

std::uint64_t TextEncoderStack::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::span<const double> values) {
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  };
  for (const auto& blk : blocks) {
    mix(blk.norm.gain);
    mix(blk.norm.bias);
    mix(blk.w1.data());
    mix(blk.b1);
    mix(blk.out.weight.data());
    mix(blk.out.bias);
  }
  mix(projection.data());
  return h;
}

SiteVars bind_sites(ad::Tape& tape, std::span<const SsfSite> sites, std::size_t offset) {
  SiteVars vars;
  for (const SsfSite& site : sites) {
    if (site.trainable) {
      vars.gamma.push_back(tape.parameter(site.params.gamma, offset));
      offset += site.params.dim();
      vars.beta.push_back(tape.parameter(site.params.beta, offset));
      offset += site.params.dim();
    } else {
      vars.gamma.push_back(tape.constant(site.params.gamma));
      vars.beta.push_back(tape.constant(site.params.beta));
    }
  }
  return vars;
}

ad::Var encode(ad::Tape& tape, const TextEncoderStack& stack, const Matrix& tokens,
               std::span<const SsfSite> sites, const SiteVars& vars) {
  if (tokens.rows() == 0) throw DataError("encode: empty token sequence");
  if (tokens.cols() != stack.dim) {
    throw ShapeError("encode: token dim " + std::to_string(tokens.cols()) + " != encoder dim " +
                     std::to_string(stack.dim));
  }
  const bool with_ssf = !sites.empty();
  if (with_ssf && sites.size() != stack.num_blocks() * kSitesPerBlock) {
    throw ShapeError("encode: expected " + std::to_string(stack.num_blocks() * kSitesPerBlock) + " SSF sites");
  }

  struct BlockVars {
    ad::Var gain, bias, w1, b1, w2, b2;
  };
  std::vector<BlockVars> bv;
  bv.reserve(stack.num_blocks());
  for (const auto& blk : stack.blocks) {
    bv.push_back({tape.constant(blk.norm.gain), tape.constant(blk.norm.bias), tape.constant(blk.w1),
                  tape.constant(blk.b1), tape.constant(blk.out.weight), tape.constant(blk.out.bias)});
  }

  std::vector<ad::Var> pooled;
  pooled.reserve(tokens.rows());
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    ad::Var x = tape.constant(tokens.row(t));
    for (std::size_t b = 0; b < stack.num_blocks(); ++b) {
      ad::Var u = tape.layernorm(x, bv[b].gain, bv[b].bias);
      if (with_ssf) {
        const std::size_t s = b * kSitesPerBlock;
        u = tape.scale_shift(u, vars.gamma[s], vars.beta[s]);
      }
      ad::Var hidden = tape.tanh(tape.add(tape.matvec(bv[b].w1, u), bv[b].b1));
      ad::Var m = tape.add(tape.matvec(bv[b].w2, hidden), bv[b].b2);
      if (with_ssf) {
        const std::size_t s = b * kSitesPerBlock + 1;
        m = tape.scale_shift(m, vars.gamma[s], vars.beta[s]);
      }
      x = tape.add(x, m);
    }
    pooled.push_back(x);
  }
  ad::Var projected = tape.matvec(tape.constant(stack.projection), tape.mean(pooled));
  return tape.l2_normalize(projected);
}

Vector encode(const TextEncoderStack& stack, const Matrix& tokens, std::span<const SsfSite> sites) {
  ad::Tape tape;
  const SiteVars vars = bind_sites(tape, sites, 0);
  const ad::Var out = encode(tape, stack, tokens, sites, vars);
  const auto v = tape.value(out);
  return Vector(v.begin(), v.end());
}

Vector encode_frozen(const TextEncoderStack& stack, const Matrix& tokens) { return encode(stack, tokens, {}); }

TextEncoderStack merge_sites(const TextEncoderStack& stack, std::span<const SsfSite> sites) {
  if (sites.size() != stack.num_blocks() * kSitesPerBlock) {
    throw ShapeError("merge_sites: expected " + std::to_string(stack.num_blocks() * kSitesPerBlock) + " SSF sites");
  }
  TextEncoderStack merged = stack;
  for (const SsfSite& site : sites) {
    if (site.block < 1 || site.block > stack.num_blocks()) throw ShapeError("merge_sites: block index out of range");
    EncoderBlock& blk = merged.blocks[site.block - 1];
    if (site.kind == SiteKind::kPostLayerNorm) {
      blk.norm = merge_reparam(blk.norm, site);
    } else {
      blk.out = merge_reparam(blk.out, site);
    }
  }
  return merged;
}

std::string to_string(GuidanceKind kind) {
  switch (kind) {
    case GuidanceKind::kAuto:
      return "auto";
    case GuidanceKind::kTumor:
      return "tumor";
    case GuidanceKind::kMean:
      return "mean";
  }
  return "auto";
}

GuidanceKind guidance_kind_from_string(const std::string& name) {
  if (name == "auto") return GuidanceKind::kAuto;
  if (name == "tumor") return GuidanceKind::kTumor;
  if (name == "mean") return GuidanceKind::kMean;
  throw ConfigError("guidance must be one of auto|tumor|mean, got '" + name + "'");
}

namespace {

enum class Pick { kSingle, kTumor, kMean };

Pick resolve(std::size_t classes, const GuidanceSpec& spec) {
  if (classes == 0) throw ConfigError("refinement_embedding: no class embeddings");
  if (classes == 1) return Pick::kSingle;
  GuidanceKind kind = spec.kind;
  if (kind == GuidanceKind::kAuto) kind = classes == 2 ? GuidanceKind::kTumor : GuidanceKind::kMean;
  if (kind == GuidanceKind::kTumor) {
    if (spec.tumor_class >= classes) throw ConfigError("tumor_class is not a valid class index");
    return Pick::kTumor;
  }
  return Pick::kMean;
}

}  // namespace

std::optional<Vector> refinement_embedding(std::span<const Vector> class_embeddings, const GuidanceSpec& spec) {
  switch (resolve(class_embeddings.size(), spec)) {
    case Pick::kSingle:
      return class_embeddings.front();
    case Pick::kTumor:
      return class_embeddings[spec.tumor_class];
    case Pick::kMean:
      break;
  }
  Vector mean(class_embeddings.front().size(), 0.0);
  for (const Vector& t : class_embeddings) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t[i];
  }
  for (double& v : mean) v /= static_cast<double>(class_embeddings.size());
  if (is_degenerate(mean)) return std::nullopt;
  return l2_normalize(mean);
}

std::optional<ad::Var> refinement_embedding(ad::Tape& tape, std::span<const ad::Var> class_embeddings,
                                            const GuidanceSpec& spec) {
  switch (resolve(class_embeddings.size(), spec)) {
    case Pick::kSingle:
      return class_embeddings.front();
    case Pick::kTumor:
      return class_embeddings[spec.tumor_class];
    case Pick::kMean:
      break;
  }
  const ad::Var mean = tape.mean(class_embeddings);
  if (is_degenerate(tape.value(mean))) return std::nullopt;
  return tape.l2_normalize(mean);
}

}  // namespace hipss
