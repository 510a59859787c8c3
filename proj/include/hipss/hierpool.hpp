#pragma once

// Hierarchical text-guided pooling: instances -> region embedding (region
// encoder), regions -> slide embedding (WSI encoder). Both levels use gated
// attention, w^T (tanh(V1 h) * sigmoid(V2 h)), plus a refinement score from
// the cosine between the pooled item and the guidance text embedding.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hipss/numerics.hpp"
#include "hipss/tape.hpp"

namespace hipss {

using GridCoord = std::array<std::int64_t, 2>;

struct Instance {
  GridCoord coord{0, 0};
  Vector embedding;
  std::optional<int> mask;  // ground-truth tumor flag, when known
};

struct Region {
  GridCoord coord{0, 0};
  std::vector<Instance> instances;
};

struct SlideBag {
  std::string slide_id;
  std::size_t label = 0;  // 0-based class index
  std::vector<Region> regions;

  std::size_t num_instances() const;
  bool has_mask() const;
  /// Throws DataError when empty, ragged, mis-dimensioned or when
  /// coordinates repeat within a parent.
  void validate(std::size_t dim) const;
};

struct GatedAttention {
  Vector w;   // D_h
  Matrix v1;  // D_h x D_v
  Matrix v2;  // D_h x D_v

  std::size_t count() const { return w.size() + v1.size() + v2.size(); }
};

/// Region-level (w_r, V1, V2) and slide-level (w, U1, U2) blocks; disjoint.
struct AttentionParams {
  GatedAttention region;
  GatedAttention slide;

  /// V, U ~ N(0, 1/D_v), w ~ N(0, 1/D_h).
  static AttentionParams init(std::size_t dim, std::size_t hidden, std::uint64_t seed);
  std::size_t count() const { return region.count() + slide.count(); }
};

enum class GradientMode {
  kThroughScore,  // d s / d c follows the active branch
  kDetached,      // s is a constant on the tape
};

std::string to_string(GradientMode mode);
GradientMode gradient_mode_from_string(const std::string& name);

struct RefinementConfig {
  double lambda = 10.0;
  double alpha = 0.2;
  GradientMode mode = GradientMode::kThroughScore;
  bool enabled = true;  // false: s = 0 everywhere (plain gated attention)

  void validate() const;
};

/// Branch slope for cosine c: lambda if c > alpha, 1 if 0 < c <= alpha, 0 otherwise.
double refinement_slope(double c, const RefinementConfig& cfg);

/// s = slope(c) * c with c = cos(h, T). Degenerate T (nullopt) or a
/// near-zero h gives 0.
double refinement_score(std::span<const double> h, const std::optional<Vector>& text,
                        const RefinementConfig& cfg);

// ---- tape-level encoders ----

struct GatedAttentionVars {
  ad::Var w, v1, v2;
};

GatedAttentionVars bind_attention(ad::Tape& tape, const GatedAttention& params, std::optional<std::size_t> offset);

struct RegionGraph {
  ad::Var embedding;
  ad::Var weights;
};

struct SlideGraph {
  ad::Var embedding;
  ad::Var region_weights;
  std::vector<RegionGraph> regions;
};

/// Refinement scores in evaluation order. Recording appends every score
/// (nullopt where it is identically zero); replaying substitutes the recorded
/// values, as constants, for freshly computed ones.
struct ScoreLog {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<std::optional<double>> values;
  std::size_t cursor = 0;
};

/// Gated-attention logit w^T (tanh(V1 h) * sigmoid(V2 h)).
ad::Var gated_logit(ad::Tape& tape, const GatedAttentionVars& att, ad::Var h);

/// Refinement score on the tape; nullopt when s is identically zero.
std::optional<ad::Var> refinement_score(ad::Tape& tape, ad::Var h, const std::optional<ad::Var>& text,
                                        const RefinementConfig& cfg, ScoreLog* log = nullptr);

RegionGraph region_encode(ad::Tape& tape, std::span<const ad::Var> instances, const std::optional<ad::Var>& text,
                          const GatedAttentionVars& att, const RefinementConfig& cfg, ScoreLog* log = nullptr);
RegionGraph region_encode(ad::Tape& tape, const Region& region, const std::optional<ad::Var>& text,
                          const GatedAttentionVars& att, const RefinementConfig& cfg, ScoreLog* log = nullptr);

SlideGraph wsi_encode(ad::Tape& tape, const SlideBag& bag, const std::optional<ad::Var>& text,
                      const GatedAttentionVars& region_att, const GatedAttentionVars& slide_att,
                      const RefinementConfig& cfg, ScoreLog* log = nullptr);

// ---- plain evaluation ----

struct RegionOutput {
  Vector embedding;
  Vector weights;
};

struct SlideOutput {
  Vector embedding;
  Vector region_weights;
  std::vector<RegionOutput> regions;
};

RegionOutput region_encode(const Region& region, const std::optional<Vector>& text, const AttentionParams& params,
                           const RefinementConfig& cfg);
SlideOutput wsi_encode(const SlideBag& bag, const std::optional<Vector>& text, const AttentionParams& params,
                       const RefinementConfig& cfg);

SlideOutput read_slide(const ad::Tape& tape, const SlideGraph& graph);

enum class SaliencyMode {
  kMultiplicative,  // a_m * a_m^j
  kInstanceOnly,    // a_m^j
};

std::string to_string(SaliencyMode mode);
SaliencyMode saliency_mode_from_string(const std::string& name);

/// Per-instance saliency min-max normalized over the slide to [0, 1];
/// 0.5 everywhere when all raw scores are equal.
std::vector<Vector> instance_saliency(const SlideOutput& out, SaliencyMode mode = SaliencyMode::kMultiplicative);

/// Thresholded saliency, flattened in region/instance order.
std::vector<int> predicted_mask(const std::vector<Vector>& saliency, double threshold);
/// Ground-truth mask flattened in the same order. Missing entries are 0.
std::vector<int> truth_mask(const SlideBag& bag);

nlohmann::json export_attention(const SlideBag& bag, const SlideOutput& out,
                                SaliencyMode mode = SaliencyMode::kMultiplicative);

}  // namespace hipss
