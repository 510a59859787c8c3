#pragma once

// Planted-signal synthetic slides, k-shot splits and evaluation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hipss/hierpool.hpp"
#include "hipss/metrics.hpp"
#include "hipss/model.hpp"
#include "hipss/textenc.hpp"

namespace hipss {

struct GeneratorSpec {
  std::uint64_t seed = 7;
  std::size_t num_classes = 2;
  std::size_t dim = 64;
  /// Class whose slides contain background only; nullopt for none.
  std::optional<std::size_t> normal_class = 0;
  double noise = 0.01;  // per-coordinate std of instance embeddings
  std::size_t slides_per_class = 45;
  std::size_t regions_min = 4;
  std::size_t regions_max = 8;
  std::size_t instances_min = 8;
  std::size_t instances_max = 16;
  double tumor_region_fraction = 0.5;
  double tumor_instance_fraction = 0.5;
  double rho = 0.7;  // prompt alignment with the class prototype
  std::size_t region_tokens = 3;
  std::size_t slide_tokens = 2;
  double max_prototype_cosine = 0.5;

  void validate() const;
};

struct Dataset {
  GeneratorSpec spec;
  Vector background;
  std::vector<Vector> prototypes;  // per class; the normal class uses the background
  std::vector<SlideBag> slides;    // ordered by slide id
  std::vector<PromptTokens> prompts;
};

/// Class-c slides get a tumor subset of regions, each holding a tumor subset
/// of instances drawn around prototype_c (mask 1); everything else is drawn
/// around the background (mask 0). Subset sizes are round(fraction * n),
/// at least 1. Deterministic in spec.seed.
Dataset generate(const GeneratorSpec& spec);

struct SplitSpec {
  std::size_t k = 4;
  std::size_t val_per_class = 5;
  std::size_t test_per_class = 20;
  std::uint64_t dataset_seed = 7;  // fixes the test partition
  std::uint64_t fold_seed = 0;     // drives train/val sampling
};

struct SplitPlan {
  std::size_t k = 0;
  std::uint64_t fold_seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Stratified sampling without replacement. The test partition depends only
/// on dataset_seed; train and val are drawn from the remainder with fold_seed.
SplitPlan kshot_split(std::span<const SlideBag> slides, std::size_t num_classes, const SplitSpec& spec);

/// Slides named in ids, in the order of ids.
std::vector<SlideBag> select(std::span<const SlideBag> slides, std::span<const std::string> ids);

struct EvalConfig {
  double dice_threshold = 0.5;
  SaliencyMode saliency = SaliencyMode::kMultiplicative;
};

struct SlideResult {
  std::string slide_id;
  std::size_t label = 0;
  Vector probabilities;
  std::optional<double> dice;
};

struct EvalMetrics {
  double auc = 0.0;
  /// Mean dice over slides whose ground-truth mask has at least one
  /// positive instance; absent when there are none.
  std::optional<double> dice;
  std::size_t dice_slides = 0;
  std::vector<SlideResult> slides;  // sorted by slide id
};

EvalMetrics evaluate(const Model& model, std::span<const SlideBag> bags, const EvalConfig& config = {});

/// Mean and sample standard deviation (0 for a single value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace hipss
