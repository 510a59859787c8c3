#include "hipss/model.hpp"

#include <algorithm>
#include <string>

#include "hipss/errors.hpp"

namespace hipss {

void ModelConfig::validate() const {
  if (dim < 2) throw ConfigError("model.dim must be >= 2");
  if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
  if (blocks < 1) throw ConfigError("model.blocks must be >= 1");
  if (depth < 1 || depth > blocks) throw ConfigError("model.depth must lie in [1, blocks]");
  if (sigma_init < 0.0) throw ConfigError("model.sigma_init must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("model.tau must be > 0");
  refinement.validate();
}

ParamCountConfig ModelConfig::param_count() const {
  return {dim, hidden, depth, kSitesPerBlock, true};
}

Model Model::create(const ModelConfig& config, std::vector<PromptTokens> prompts, std::uint64_t init_seed) {
  config.validate();
  if (prompts.empty()) throw DataError("model needs at least one class prompt");
  for (std::size_t c = 0; c < prompts.size(); ++c) {
    if (prompts[c].class_id != c) throw DataError("prompt class ids must be 0..C-1 in order");
    if (prompts[c].region_tokens.cols() != config.dim || prompts[c].slide_tokens.cols() != config.dim) {
      throw DataError("prompt tokens for class " + std::to_string(c) + " do not have width " + std::to_string(config.dim));
    }
  }
  Model m;
  m.config = config;
  m.encoder = TextEncoderStack::build(config.dim, config.blocks, config.backbone_seed);
  m.sites = make_sites(config.blocks, config.depth, config.dim, init_seed, config.sigma_init);
  m.attention = AttentionParams::init(config.dim, config.hidden, init_seed ^ 0x9e3779b97f4a7c15ULL);
  m.prompts = std::move(prompts);
  return m;
}

std::size_t Model::trainable_count() const {
  std::size_t n = attention.count();
  for (const auto& s : sites)
    if (s.trainable) n += 2 * s.params.dim();
  return n;
}

Vector Model::trainable() const {
  Vector out;
  out.reserve(trainable_count());
  for (const auto& s : sites) {
    if (!s.trainable) continue;
    out.insert(out.end(), s.params.gamma.begin(), s.params.gamma.end());
    out.insert(out.end(), s.params.beta.begin(), s.params.beta.end());
  }
  for (const GatedAttention* g : {&attention.region, &attention.slide}) {
    out.insert(out.end(), g->w.begin(), g->w.end());
    out.insert(out.end(), g->v1.data().begin(), g->v1.data().end());
    out.insert(out.end(), g->v2.data().begin(), g->v2.data().end());
  }
  return out;
}

void Model::set_trainable(std::span<const double> values) {
  if (values.size() != trainable_count()) {
    throw ShapeError("set_trainable: expected " + std::to_string(trainable_count()) + " values, got " +
                     std::to_string(values.size()));
  }
  auto it = values.begin();
  auto take = [&it](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  for (auto& s : sites) {
    if (!s.trainable) continue;
    take(s.params.gamma);
    take(s.params.beta);
  }
  for (GatedAttention* g : {&attention.region, &attention.slide}) {
    take(g->w);
    take(g->v1.data());
    take(g->v2.data());
  }
}

Model Model::merge() const {
  if (merged()) return *this;
  Model out = *this;
  out.encoder = merge_sites(encoder, sites);
  out.sites.clear();
  return out;
}

std::vector<Vector> Model::class_embeddings() const {
  std::vector<Vector> out;
  for (const auto& p : prompts) out.push_back(encode(encoder, build_prompt(p), sites));
  return out;
}

ModelGraph bind_model(ad::Tape& tape, const Model& model, bool with_grad) {
  ModelGraph g;
  std::size_t offset = 0;
  SiteVars site_vars;
  if (with_grad) {
    site_vars = bind_sites(tape, model.sites, 0);
    for (const auto& s : model.sites)
      if (s.trainable) offset += 2 * s.params.dim();
  } else {
    for (const auto& s : model.sites) {
      site_vars.gamma.push_back(tape.constant(s.params.gamma));
      site_vars.beta.push_back(tape.constant(s.params.beta));
    }
  }
  for (const auto& p : model.prompts) {
    g.class_text.push_back(encode(tape, model.encoder, build_prompt(p), model.sites, site_vars));
  }
  g.guidance = refinement_embedding(tape, g.class_text, model.config.guidance);

  std::optional<std::size_t> region_offset, slide_offset;
  if (with_grad) {
    region_offset = offset;
    slide_offset = offset + model.attention.region.count();
  }
  g.region = bind_attention(tape, model.attention.region, region_offset);
  g.slide = bind_attention(tape, model.attention.slide, slide_offset);
  return g;
}

ad::Var class_logits(ad::Tape& tape, ad::Var slide_embedding, std::span<const ad::Var> class_text, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  std::vector<ad::Var> cos;
  cos.reserve(class_text.size());
  for (ad::Var t : class_text) cos.push_back(tape.cosine(slide_embedding, t));
  return tape.scale(tape.stack(cos), 1.0 / tau);
}

SlideForward forward(ad::Tape& tape, const ModelGraph& graph, const Model& model, const SlideBag& bag,
                     ScoreLog* scores) {
  SlideForward f;
  f.pooled = wsi_encode(tape, bag, graph.guidance, graph.region, graph.slide, model.config.refinement, scores);
  f.logits = class_logits(tape, f.pooled.embedding, graph.class_text, model.config.tau);
  f.probabilities = tape.softmax(f.logits);
  return f;
}

Vector class_probabilities(std::span<const double> slide_embedding, std::span<const Vector> class_text, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (class_text.empty()) throw DataError("class_probabilities: no classes");
  Vector logits;
  logits.reserve(class_text.size());
  for (const Vector& t : class_text) logits.push_back(cosine(slide_embedding, t) / tau);
  return softmax(logits);
}

double loss(const Model& model, const SlideBag& bag, ScoreLog* scores) {
  if (bag.label >= model.num_classes()) throw DataError("slide '" + bag.slide_id + "' has an invalid label");
  ad::Tape tape;
  const ModelGraph g = bind_model(tape, model, false);
  const SlideForward f = forward(tape, g, model, bag, scores);
  return tape.scalar(tape.cross_entropy(f.logits, bag.label));
}

LossGrad loss_and_grad(const Model& model, std::span<const SlideBag> bags) {
  if (bags.empty()) throw DataError("loss_and_grad: no slides");
  ad::Tape tape;
  const ModelGraph g = bind_model(tape, model, true);
  std::vector<ad::Var> losses;
  losses.reserve(bags.size());
  for (const SlideBag& bag : bags) {
    if (bag.label >= model.num_classes()) throw DataError("slide '" + bag.slide_id + "' has an invalid label");
    const SlideForward f = forward(tape, g, model, bag);
    losses.push_back(tape.cross_entropy(f.logits, bag.label));
  }
  const ad::Var total = tape.sum(losses, 1.0 / static_cast<double>(bags.size()));
  LossGrad out;
  out.loss = tape.scalar(total);
  out.grad.assign(model.trainable_count(), 0.0);
  tape.backward(total, out.grad);
  return out;
}

std::vector<Prediction> predict(const Model& model, std::span<const SlideBag> bags) {
  std::vector<Prediction> out;
  out.reserve(bags.size());
  ad::Tape text_tape;
  const ModelGraph text = bind_model(text_tape, model, false);
  std::vector<Vector> class_text;
  for (ad::Var t : text.class_text) class_text.emplace_back(text_tape.value(t).begin(), text_tape.value(t).end());
  std::optional<Vector> guidance;
  if (text.guidance) guidance = Vector(text_tape.value(*text.guidance).begin(), text_tape.value(*text.guidance).end());

  for (const SlideBag& bag : bags) {
    ad::Tape tape;
    ModelGraph g;
    for (const Vector& t : class_text) g.class_text.push_back(tape.constant(t));
    if (guidance) g.guidance = tape.constant(*guidance);
    g.region = bind_attention(tape, model.attention.region, std::nullopt);
    g.slide = bind_attention(tape, model.attention.slide, std::nullopt);
    const SlideForward f = forward(tape, g, model, bag);
    const auto p = tape.value(f.probabilities);
    out.push_back({Vector(p.begin(), p.end()), read_slide(tape, f.pooled)});
  }
  return out;
}

}  // namespace hipss
