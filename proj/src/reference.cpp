#include "hipss/reference.hpp"

#include <cmath>
#include <optional>

#include "hipss/errors.hpp"

namespace hipss {

namespace {

using Real = long double;
using RVec = std::vector<Real>;

RVec widen(std::span<const double> x) { return RVec(x.begin(), x.end()); }

RVec matvec(const Matrix& a, const RVec& x) {
  RVec y(a.rows(), 0.0L);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    Real acc = 0.0L;
    for (std::size_t c = 0; c < a.cols(); ++c) acc += static_cast<Real>(a(r, c)) * x[c];
    y[r] = acc;
  }
  return y;
}

Real dot(const RVec& a, const RVec& b) {
  Real acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Real norm(const RVec& a) { return std::sqrt(dot(a, a)); }

bool degenerate(const RVec& a) { return norm(a) < static_cast<Real>(kNormEps); }

Real cosine(const RVec& a, const RVec& b) { return dot(a, b) / (norm(a) * norm(b)); }

RVec normalized(const RVec& a) {
  const Real n = norm(a);
  RVec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

RVec scale_shift(const RVec& x, const SsfParams& p) {
  RVec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<Real>(p.gamma[i]) * x[i] + static_cast<Real>(p.beta[i]);
  return y;
}

RVec encode_tokens(const TextEncoderStack& stack, const Matrix& tokens, const std::vector<SsfSite>& sites) {
  const std::size_t d = stack.dim;
  RVec pooled(d, 0.0L);
  for (std::size_t t = 0; t < tokens.rows(); ++t) {
    RVec x = widen(tokens.row(t));
    for (std::size_t b = 0; b < stack.num_blocks(); ++b) {
      const EncoderBlock& blk = stack.blocks[b];
      Real mean = 0.0L;
      for (Real v : x) mean += v;
      mean /= static_cast<Real>(d);
      Real var = 0.0L;
      for (Real v : x) var += (v - mean) * (v - mean);
      var /= static_cast<Real>(d);
      const Real inv_std = 1.0L / std::sqrt(var + static_cast<Real>(kLayerNormEps));
      RVec u(d);
      for (std::size_t i = 0; i < d; ++i) {
        u[i] = static_cast<Real>(blk.norm.gain[i]) * (x[i] - mean) * inv_std + static_cast<Real>(blk.norm.bias[i]);
      }
      if (!sites.empty()) u = scale_shift(u, sites[b * kSitesPerBlock].params);
      RVec hidden = matvec(blk.w1, u);
      for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::tanh(hidden[i] + static_cast<Real>(blk.b1[i]));
      RVec m = matvec(blk.out.weight, hidden);
      for (std::size_t i = 0; i < d; ++i) m[i] += static_cast<Real>(blk.out.bias[i]);
      if (!sites.empty()) m = scale_shift(m, sites[b * kSitesPerBlock + 1].params);
      for (std::size_t i = 0; i < d; ++i) x[i] += m[i];
    }
    for (std::size_t i = 0; i < d; ++i) pooled[i] += x[i];
  }
  for (Real& v : pooled) v /= static_cast<Real>(tokens.rows());
  return normalized(matvec(stack.projection, pooled));
}

struct Scorer {
  const RefinementConfig& cfg;
  const std::optional<RVec>& text;
  const ScoreLog* frozen;
  std::size_t cursor = 0;

  Real operator()(const RVec& h) {
    if (frozen) {
      if (cursor >= frozen->values.size()) throw ShapeError("score log exhausted");
      const auto v = frozen->values[cursor++];
      return v ? static_cast<Real>(*v) : 0.0L;
    }
    if (!cfg.enabled || !text || degenerate(h) || degenerate(*text)) return 0.0L;
    const Real c = cosine(h, *text);
    if (c > static_cast<Real>(cfg.alpha)) return static_cast<Real>(cfg.lambda) * c;
    if (c > 0.0L) return c;
    return 0.0L;
  }
};

RVec attention_pool(const std::vector<RVec>& items, const GatedAttention& att, Scorer& score) {
  std::vector<Real> logits;
  for (const RVec& h : items) {
    const RVec a = matvec(att.v1, h);
    const RVec b = matvec(att.v2, h);
    Real z = 0.0L;
    for (std::size_t k = 0; k < a.size(); ++k) z += static_cast<Real>(att.w[k]) * std::tanh(a[k]) / (1.0L + std::exp(-b[k]));
    logits.push_back(z + score(h));
  }
  Real mx = logits.front();
  for (Real z : logits) mx = std::max(mx, z);
  Real total = 0.0L;
  for (Real& z : logits) total += (z = std::exp(z - mx));
  RVec out(items.front().size(), 0.0L);
  for (std::size_t j = 0; j < items.size(); ++j) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += logits[j] / total * items[j][i];
  }
  return out;
}

std::optional<RVec> guidance(const std::vector<RVec>& texts, const GuidanceSpec& spec) {
  const std::size_t c = texts.size();
  const bool tumor = spec.kind == GuidanceKind::kTumor || (spec.kind == GuidanceKind::kAuto && c == 2);
  if (c == 1) return texts.front();
  if (tumor) return texts.at(spec.tumor_class);
  RVec mean(texts.front().size(), 0.0L);
  for (const RVec& t : texts) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t[i] / static_cast<Real>(c);
  }
  if (degenerate(mean)) return std::nullopt;
  return normalized(mean);
}

}  // namespace

long double reference_loss(const Model& model, const SlideBag& bag, const ScoreLog* frozen) {
  if (bag.label >= model.num_classes()) throw DataError("slide '" + bag.slide_id + "' has an invalid label");
  std::vector<RVec> texts;
  for (const PromptTokens& p : model.prompts) texts.push_back(encode_tokens(model.encoder, build_prompt(p), model.sites));
  const std::optional<RVec> text = guidance(texts, model.config.guidance);

  Scorer score{model.config.refinement, text, frozen};
  std::vector<RVec> regions;
  for (const Region& region : bag.regions) {
    std::vector<RVec> instances;
    for (const Instance& inst : region.instances) instances.push_back(widen(inst.embedding));
    regions.push_back(attention_pool(instances, model.attention.region, score));
  }
  const RVec slide = attention_pool(regions, model.attention.slide, score);

  std::vector<Real> logits;
  for (const RVec& t : texts) logits.push_back(cosine(slide, t) / static_cast<Real>(model.config.tau));
  Real mx = logits.front();
  for (Real z : logits) mx = std::max(mx, z);
  Real total = 0.0L;
  for (Real z : logits) total += std::exp(z - mx);
  return -(logits[bag.label] - mx - std::log(total));
}

}  // namespace hipss
