#pragma once

// Tape-free evaluation of the slide loss in extended precision. Serves as the
// finite-difference reference for gradient checks: its rounding floor sits
// about three orders of magnitude below double's.

#include "hipss/hierpool.hpp"
#include "hipss/model.hpp"

namespace hipss {

/// -log P(label) for one bag. A replaying `frozen` log supplies the
/// refinement scores in evaluation order instead of computing them.
long double reference_loss(const Model& model, const SlideBag& bag, const ScoreLog* frozen = nullptr);

}  // namespace hipss
