#pragma once

// Tape-based reverse-mode differentiation over the closed set of primitives
// the slide classifier needs. Each recorded op keeps its forward value (plus
// whatever its backward rule needs); backward walks the tape once in reverse.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "hipss/numerics.hpp"

namespace hipss::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kMatVec,
  kMatMul,
  kAdd,
  kHadamard,
  kScale,
  kTanh,
  kSigmoid,
  kDot,
  kSoftmax,
  kCosine,
  kL2Normalize,
  kLayerNorm,
  kScaleShift,
  kStack,
  kSum,
  kMean,
  kWeightedSum,
  kPiecewiseLinear,
  kCrossEntropy,
};

/// Handle to a recorded value. Only meaningful together with its tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

inline constexpr std::size_t kNoGrad = std::numeric_limits<std::size_t>::max();

class Tape {
 public:
  Var constant(std::span<const double> value);
  Var constant(const Matrix& value);
  Var scalar_constant(double value);
  /// Leaf whose gradient is accumulated into param_grad[offset, offset + size).
  Var parameter(std::span<const double> value, std::size_t offset);
  Var parameter(const Matrix& value, std::size_t offset);

  Var matvec(Var a, Var x);
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var x, double factor);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var dot(Var a, Var b);
  Var softmax(Var logits);
  Var cosine(Var u, Var v);
  Var l2_normalize(Var u);
  Var layernorm(Var x, Var gain, Var bias);
  /// gamma * x + beta, elementwise.
  Var scale_shift(Var x, Var gamma, Var beta);
  /// Scalars -> vector.
  Var stack(std::span<const Var> scalars);
  /// factor * (sum of scalars).
  Var sum(std::span<const Var> scalars, double factor = 1.0);
  Var mean(std::span<const Var> vectors);
  /// sum_j weights[j] * vectors[j].
  Var weighted_sum(Var weights, std::span<const Var> vectors);
  /// slope * x for a scalar x, where slope was fixed by the caller at record
  /// time (piecewise-linear functions with a frozen branch indicator).
  Var piecewise_linear(Var x, double slope);
  /// -log softmax(logits)[label].
  Var cross_entropy(Var logits, std::size_t label);

  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output. Adds d(output)/d(param) into
  /// param_grad for every parameter leaf reachable from output. Returns the
  /// number of recorded ops visited.
  std::size_t backward(Var output, std::span<double> param_grad) const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint32_t> inputs;
    Vector value;
    Vector saved;
    double aux = 0.0;
    std::size_t label = 0;
    std::size_t grad_offset = kNoGrad;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  Node make(Op op, std::initializer_list<Var> inputs) const;

  std::vector<Node> nodes_;
};

}  // namespace hipss::ad
