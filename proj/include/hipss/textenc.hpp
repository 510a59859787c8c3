#pragma once

// Frozen text-encoder stand-in. Each block is
//   layernorm -> SSF -> W2 tanh(W1 x + b1) + b2 -> SSF -> residual add,
// then tokens are mean-pooled, projected and l2-normalized.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hipss/numerics.hpp"
#include "hipss/ssf.hpp"
#include "hipss/tape.hpp"

namespace hipss {

/// Prompt token embeddings for one class; each row of a token matrix is one
/// token of width D_t.
struct PromptTokens {
  std::size_t class_id = 0;
  std::string name;
  Matrix region_tokens;
  Matrix slide_tokens;
};

/// [region tokens ; slide tokens], region first.
Matrix build_prompt(const PromptTokens& prompt);

struct EncoderBlock {
  AffineLayerNorm norm;
  Matrix w1;
  Vector b1;
  AffineLinear out;  // W2, b2
};

struct TextEncoderStack {
  std::size_t dim = 0;
  std::vector<EncoderBlock> blocks;
  Matrix projection;

  /// Seeded backbone: matrices ~ N(0, 1/D_t) entries (std 1/sqrt(D_t)),
  /// layernorm gain ~ 1 + N(0, 0.1^2), biases ~ N(0, 0.1^2).
  static TextEncoderStack build(std::size_t dim, std::size_t num_blocks, std::uint64_t seed);

  std::size_t num_blocks() const { return blocks.size(); }
  /// Order-sensitive FNV-1a over the raw bytes of every backbone weight.
  std::uint64_t checksum() const;
};

/// Tape handles for the SSF parameters of every site, in make_sites order.
struct SiteVars {
  std::vector<ad::Var> gamma;
  std::vector<ad::Var> beta;
};

/// Record the SSF parameters on a tape. Trainable sites become parameter
/// leaves at consecutive offsets starting at `offset` (gamma then beta per
/// site); frozen sites become constants.
SiteVars bind_sites(ad::Tape& tape, std::span<const SsfSite> sites, std::size_t offset);

/// Record a full encode on the tape. An empty `sites` runs the bare stack
/// (no adapter ops), which is how a merged stack is evaluated.
ad::Var encode(ad::Tape& tape, const TextEncoderStack& stack, const Matrix& tokens,
               std::span<const SsfSite> sites, const SiteVars& vars);

/// Plain evaluation.
Vector encode(const TextEncoderStack& stack, const Matrix& tokens, std::span<const SsfSite> sites);
Vector encode_frozen(const TextEncoderStack& stack, const Matrix& tokens);

/// Fold every site into its preceding affine layer. The result is evaluated
/// with no sites.
TextEncoderStack merge_sites(const TextEncoderStack& stack, std::span<const SsfSite> sites);

enum class GuidanceKind {
  kAuto,   // tumor class for C == 2, mean of all classes otherwise
  kTumor,  // embedding of the designated tumor class
  kMean,   // l2-normalized mean of the class embeddings
};

std::string to_string(GuidanceKind kind);
GuidanceKind guidance_kind_from_string(const std::string& name);

struct GuidanceSpec {
  GuidanceKind kind = GuidanceKind::kAuto;
  std::size_t tumor_class = 1;
};

/// Returns nullopt (the degenerate flag) when the mean embedding has norm
/// below kNormEps.
std::optional<Vector> refinement_embedding(std::span<const Vector> class_embeddings,
                                           const GuidanceSpec& spec);

/// Tape version; same selection rule, degenerate check on forward values.
std::optional<ad::Var> refinement_embedding(ad::Tape& tape, std::span<const ad::Var> class_embeddings,
                                            const GuidanceSpec& spec);

}  // namespace hipss
