#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hipss/numerics.hpp"

namespace hipss {

/// Binary ROC-AUC via the Mann-Whitney statistic; tied (positive, negative)
/// pairs count 1/2. labels are 0/1. Throws DataError unless both classes
/// are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// C == 2: AUC of P(class 1). C > 2: macro average of one-vs-rest AUCs.
double auc_multiclass(std::span<const Vector> probabilities, std::span<const std::size_t> labels,
                      std::size_t num_classes);

/// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
double dice(std::span<const int> predicted, std::span<const int> truth);

}  // namespace hipss
