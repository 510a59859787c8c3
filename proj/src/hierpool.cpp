#include "hipss/hierpool.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hipss/errors.hpp"

namespace hipss {

std::size_t SlideBag::num_instances() const {
  std::size_t n = 0;
  for (const auto& r : regions) n += r.instances.size();
  return n;
}

bool SlideBag::has_mask() const {
  for (const auto& r : regions)
    for (const auto& inst : r.instances)
      if (inst.mask) return true;
  return false;
}

void SlideBag::validate(std::size_t dim) const {
  const std::string where = "slide '" + slide_id + "'";
  if (regions.empty()) throw DataError(where + ": no regions");
  std::set<GridCoord> region_coords;
  for (const auto& r : regions) {
    if (!region_coords.insert(r.coord).second) throw DataError(where + ": duplicate region coordinate");
    if (r.instances.empty()) throw DataError(where + ": empty region");
    std::set<GridCoord> inst_coords;
    for (const auto& inst : r.instances) {
      if (!inst_coords.insert(inst.coord).second) throw DataError(where + ": duplicate instance coordinate");
      if (inst.embedding.size() != dim) {
        throw DataError(where + ": instance embedding has dim " + std::to_string(inst.embedding.size()) +
                        ", expected " + std::to_string(dim));
      }
      if (!all_finite(inst.embedding)) throw DataError(where + ": non-finite instance embedding");
      if (inst.mask && *inst.mask != 0 && *inst.mask != 1) throw DataError(where + ": mask must be 0 or 1");
    }
  }
}

AttentionParams AttentionParams::init(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  if (dim == 0 || hidden == 0) throw ConfigError("attention dims must be positive");
  Rng rng(seed);
  const double vstd = 1.0 / std::sqrt(static_cast<double>(dim));
  const double wstd = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto block = [&] {
    GatedAttention g;
    g.w = random_normal(rng, hidden, 0.0, wstd);
    g.v1 = random_normal(rng, hidden, dim, vstd);
    g.v2 = random_normal(rng, hidden, dim, vstd);
    return g;
  };
  AttentionParams p;
  p.region = block();
  p.slide = block();
  return p;
}

std::string to_string(GradientMode mode) {
  return mode == GradientMode::kThroughScore ? "through_score" : "detached";
}

GradientMode gradient_mode_from_string(const std::string& name) {
  if (name == "through_score") return GradientMode::kThroughScore;
  if (name == "detached") return GradientMode::kDetached;
  throw ConfigError("gradient_mode must be through_score|detached, got '" + name + "'");
}

void RefinementConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

double refinement_slope(double c, const RefinementConfig& cfg) {
  if (c > cfg.alpha) return cfg.lambda;
  if (c > 0.0) return 1.0;
  return 0.0;
}

double refinement_score(std::span<const double> h, const std::optional<Vector>& text, const RefinementConfig& cfg) {
  if (!cfg.enabled || !text || is_degenerate(h) || is_degenerate(*text)) return 0.0;
  const double c = cosine(h, *text);
  const double slope = refinement_slope(c, cfg);
  return slope == 0.0 ? 0.0 : slope * c;
}

GatedAttentionVars bind_attention(ad::Tape& tape, const GatedAttention& params, std::optional<std::size_t> offset) {
  if (!offset) return {tape.constant(params.w), tape.constant(params.v1), tape.constant(params.v2)};
  std::size_t o = *offset;
  GatedAttentionVars v;
  v.w = tape.parameter(params.w, o);
  o += params.w.size();
  v.v1 = tape.parameter(params.v1, o);
  o += params.v1.size();
  v.v2 = tape.parameter(params.v2, o);
  return v;
}

ad::Var gated_logit(ad::Tape& tape, const GatedAttentionVars& att, ad::Var h) {
  ad::Var gate = tape.hadamard(tape.tanh(tape.matvec(att.v1, h)), tape.sigmoid(tape.matvec(att.v2, h)));
  return tape.dot(att.w, gate);
}

std::optional<ad::Var> refinement_score(ad::Tape& tape, ad::Var h, const std::optional<ad::Var>& text,
                                        const RefinementConfig& cfg, ScoreLog* log) {
  if (log && log->mode == ScoreLog::Mode::kReplay) {
    if (log->cursor >= log->values.size()) throw ShapeError("score log exhausted");
    const auto v = log->values[log->cursor++];
    if (!v) return std::nullopt;
    return tape.scalar_constant(*v);
  }
  double value = 0.0;
  std::optional<ad::Var> s;
  if (cfg.enabled && text && !is_degenerate(tape.value(h)) && !is_degenerate(tape.value(*text))) {
    const double c = hipss::cosine(tape.value(h), tape.value(*text));
    const double slope = refinement_slope(c, cfg);
    if (slope != 0.0) {
      value = slope * c;
      s = cfg.mode == GradientMode::kDetached ? tape.scalar_constant(value)
                                              : tape.piecewise_linear(tape.cosine(h, *text), slope);
    }
  }
  if (log) log->values.push_back(s ? std::optional<double>(value) : std::nullopt);
  return s;
}

RegionGraph region_encode(ad::Tape& tape, std::span<const ad::Var> instances, const std::optional<ad::Var>& text,
                          const GatedAttentionVars& att, const RefinementConfig& cfg, ScoreLog* log) {
  if (instances.empty()) throw DataError("region_encode: empty region");
  std::vector<ad::Var> logits;
  logits.reserve(instances.size());
  for (ad::Var h : instances) {
    ad::Var z = gated_logit(tape, att, h);
    if (auto s = refinement_score(tape, h, text, cfg, log)) z = tape.add(z, *s);
    logits.push_back(z);
  }
  ad::Var weights = tape.softmax(tape.stack(logits));
  return {tape.weighted_sum(weights, instances), weights};
}

RegionGraph region_encode(ad::Tape& tape, const Region& region, const std::optional<ad::Var>& text,
                          const GatedAttentionVars& att, const RefinementConfig& cfg, ScoreLog* log) {
  std::vector<ad::Var> hs;
  hs.reserve(region.instances.size());
  for (const auto& inst : region.instances) hs.push_back(tape.constant(inst.embedding));
  return region_encode(tape, hs, text, att, cfg, log);
}

SlideGraph wsi_encode(ad::Tape& tape, const SlideBag& bag, const std::optional<ad::Var>& text,
                      const GatedAttentionVars& region_att, const GatedAttentionVars& slide_att,
                      const RefinementConfig& cfg, ScoreLog* log) {
  if (bag.regions.empty()) throw DataError("wsi_encode: slide '" + bag.slide_id + "' has no regions");
  SlideGraph g;
  std::vector<ad::Var> embeddings;
  for (const auto& region : bag.regions) {
    g.regions.push_back(region_encode(tape, region, text, region_att, cfg, log));
    embeddings.push_back(g.regions.back().embedding);
  }
  RegionGraph top = region_encode(tape, embeddings, text, slide_att, cfg, log);
  g.embedding = top.embedding;
  g.region_weights = top.weights;
  return g;
}

namespace {

Vector copy(std::span<const double> s) { return Vector(s.begin(), s.end()); }

std::optional<ad::Var> bind_text(ad::Tape& tape, const std::optional<Vector>& text) {
  if (!text) return std::nullopt;
  return tape.constant(*text);
}

}  // namespace

SlideOutput read_slide(const ad::Tape& tape, const SlideGraph& graph) {
  SlideOutput out;
  out.embedding = copy(tape.value(graph.embedding));
  out.region_weights = copy(tape.value(graph.region_weights));
  for (const auto& r : graph.regions) out.regions.push_back({copy(tape.value(r.embedding)), copy(tape.value(r.weights))});
  return out;
}

RegionOutput region_encode(const Region& region, const std::optional<Vector>& text, const AttentionParams& params,
                           const RefinementConfig& cfg) {
  ad::Tape tape;
  const auto t = bind_text(tape, text);
  const RegionGraph g = region_encode(tape, region, t, bind_attention(tape, params.region, std::nullopt), cfg);
  return {copy(tape.value(g.embedding)), copy(tape.value(g.weights))};
}

SlideOutput wsi_encode(const SlideBag& bag, const std::optional<Vector>& text, const AttentionParams& params,
                       const RefinementConfig& cfg) {
  ad::Tape tape;
  const auto t = bind_text(tape, text);
  const SlideGraph g = wsi_encode(tape, bag, t, bind_attention(tape, params.region, std::nullopt),
                                  bind_attention(tape, params.slide, std::nullopt), cfg);
  return read_slide(tape, g);
}

std::string to_string(SaliencyMode mode) {
  return mode == SaliencyMode::kMultiplicative ? "multiplicative" : "instance_only";
}

SaliencyMode saliency_mode_from_string(const std::string& name) {
  if (name == "multiplicative") return SaliencyMode::kMultiplicative;
  if (name == "instance_only") return SaliencyMode::kInstanceOnly;
  throw ConfigError("saliency must be multiplicative|instance_only, got '" + name + "'");
}

std::vector<Vector> instance_saliency(const SlideOutput& out, SaliencyMode mode) {
  std::vector<Vector> raw;
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t m = 0; m < out.regions.size(); ++m) {
    Vector r = out.regions[m].weights;
    if (mode == SaliencyMode::kMultiplicative) {
      for (double& v : r) v *= out.region_weights[m];
    }
    for (double v : r) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    raw.push_back(std::move(r));
  }
  for (Vector& r : raw) {
    for (double& v : r) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
  }
  return raw;
}

std::vector<int> predicted_mask(const std::vector<Vector>& saliency, double threshold) {
  std::vector<int> out;
  for (const Vector& r : saliency)
    for (double v : r) out.push_back(v >= threshold ? 1 : 0);
  return out;
}

std::vector<int> truth_mask(const SlideBag& bag) {
  std::vector<int> out;
  for (const auto& r : bag.regions)
    for (const auto& inst : r.instances) out.push_back(inst.mask.value_or(0));
  return out;
}

nlohmann::json export_attention(const SlideBag& bag, const SlideOutput& out, SaliencyMode mode) {
  if (out.regions.size() != bag.regions.size()) throw DataError("export_attention: outputs do not match bag");
  const auto saliency = instance_saliency(out, mode);
  nlohmann::json regions = nlohmann::json::array();
  for (std::size_t m = 0; m < bag.regions.size(); ++m) {
    const Region& region = bag.regions[m];
    nlohmann::json instances = nlohmann::json::array();
    for (std::size_t j = 0; j < region.instances.size(); ++j) {
      nlohmann::json inst = {{"coord", region.instances[j].coord},
                             {"weight", out.regions[m].weights[j]},
                             {"saliency", saliency[m][j]}};
      if (region.instances[j].mask) inst["mask"] = *region.instances[j].mask;
      instances.push_back(std::move(inst));
    }
    regions.push_back({{"coord", region.coord}, {"weight", out.region_weights[m]}, {"instances", std::move(instances)}});
  }
  return {{"slide_id", bag.slide_id}, {"label", bag.label}, {"saliency_mode", to_string(mode)}, {"regions", std::move(regions)}};
}

}  // namespace hipss
