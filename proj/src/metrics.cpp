#include "hipss/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "hipss/errors.hpp"

namespace hipss {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, then U = R_pos - n_pos (n_pos + 1) / 2.
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      } else if (labels[order[k]] != 0) {
        throw DataError("auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: undefined with a single class present");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double auc_multiclass(std::span<const Vector> probabilities, std::span<const std::size_t> labels,
                      std::size_t num_classes) {
  if (probabilities.size() != labels.size()) throw ShapeError("auc_multiclass: length mismatch");
  if (num_classes < 2) throw DataError("auc_multiclass: need at least two classes");
  auto one_vs_rest = [&](std::size_t c) {
    std::vector<double> scores;
    std::vector<int> bin;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (probabilities[i].size() != num_classes) throw ShapeError("auc_multiclass: probability width mismatch");
      scores.push_back(probabilities[i][c]);
      bin.push_back(labels[i] == c ? 1 : 0);
    }
    return auc(scores, bin);
  };
  if (num_classes == 2) return one_vs_rest(1);
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += one_vs_rest(c);
  return total / static_cast<double>(num_classes);
}

double dice(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("dice: mask lengths differ (" + std::to_string(predicted.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool t = truth[i] != 0;
    a += p;
    b += t;
    both += p && t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace hipss
