#pragma once

// The full classifier: frozen text encoder + SSF sites produce one unit text
// embedding per class; the hierarchical pooler produces a slide embedding;
// class probabilities are softmax(cos(F(X), T_c) / tau).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hipss/hierpool.hpp"
#include "hipss/ssf.hpp"
#include "hipss/tape.hpp"
#include "hipss/textenc.hpp"

namespace hipss {

struct ModelConfig {
  std::size_t dim = 64;     // D_t = D_v
  std::size_t hidden = 32;  // D_h
  std::size_t blocks = 12;  // L
  std::size_t depth = 2;    // d_s
  std::uint64_t backbone_seed = 20240917;
  double sigma_init = 0.02;
  double tau = 0.07;
  RefinementConfig refinement;
  GuidanceSpec guidance;

  void validate() const;
  ParamCountConfig param_count() const;
};

class Model {
 public:
  /// Builds the seeded backbone, SSF sites (identity outside the tuned depth)
  /// and attention parameters. `init_seed` drives the trainable draws only.
  static Model create(const ModelConfig& config, std::vector<PromptTokens> prompts, std::uint64_t init_seed);

  ModelConfig config;
  TextEncoderStack encoder;
  std::vector<SsfSite> sites;  // empty once merged
  AttentionParams attention;
  std::vector<PromptTokens> prompts;

  bool merged() const { return sites.empty(); }
  std::size_t num_classes() const { return prompts.size(); }

  /// SSF gamma/beta of trainable sites (site order, gamma then beta), then
  /// region w, V1, V2, then slide w, U1, U2.
  std::size_t trainable_count() const;
  Vector trainable() const;
  void set_trainable(std::span<const double> values);

  /// Folds all SSF sites into the backbone. Attention is untouched.
  Model merge() const;

  /// Plain class text embeddings T_c.
  std::vector<Vector> class_embeddings() const;
};

/// Model parameters and class texts recorded on one tape.
struct ModelGraph {
  std::vector<ad::Var> class_text;
  std::optional<ad::Var> guidance;
  GatedAttentionVars region;
  GatedAttentionVars slide;
};

/// With `with_grad` false every parameter is a constant.
ModelGraph bind_model(ad::Tape& tape, const Model& model, bool with_grad);

/// Stacked cos(F, T_c) / tau.
ad::Var class_logits(ad::Tape& tape, ad::Var slide_embedding, std::span<const ad::Var> class_text, double tau);

struct SlideForward {
  SlideGraph pooled;
  ad::Var logits;
  ad::Var probabilities;
};

SlideForward forward(ad::Tape& tape, const ModelGraph& graph, const Model& model, const SlideBag& bag,
                     ScoreLog* scores = nullptr);

/// P(c) = softmax_c(cos(F, T_c) / tau); embeddings normalized internally.
Vector class_probabilities(std::span<const double> slide_embedding, std::span<const Vector> class_text, double tau);

/// -log P(label). `scores` records or replays the refinement scores.
double loss(const Model& model, const SlideBag& bag, ScoreLog* scores = nullptr);

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// Mean cross-entropy over bags and its gradient w.r.t. Model::trainable().
LossGrad loss_and_grad(const Model& model, std::span<const SlideBag> bags);

struct Prediction {
  Vector probabilities;
  SlideOutput pooled;
};

std::vector<Prediction> predict(const Model& model, std::span<const SlideBag> bags);

}  // namespace hipss
