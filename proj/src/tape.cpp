#include "hipss/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hipss/errors.hpp"

namespace hipss::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

Vector& grad_slot(std::vector<Vector>& grads, std::uint32_t id, std::size_t n) {
  Vector& g = grads[id];
  if (g.empty()) g.assign(n, 0.0);
  return g;
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable");
  return nodes_[v.id];
}

Var Tape::push(Node n) {
  if (!all_finite(n.value)) throw NumericError("tape: non-finite forward value");
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tape::Node Tape::make(Op op, std::initializer_list<Var> inputs) const {
  Node n;
  n.op = op;
  for (Var v : inputs) {
    n.requires_grad = n.requires_grad || node(v).requires_grad;
    n.inputs.push_back(v.id);
  }
  return n;
}

std::span<const double> Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Node& n = node(v);
  require(n.value.size() == 1, "tape: value is not a scalar");
  return n.value[0];
}

Var Tape::constant(std::span<const double> value) {
  Node n;
  n.rows = static_cast<std::uint32_t>(value.size());
  n.cols = 1;
  n.value.assign(value.begin(), value.end());
  return push(std::move(n));
}

Var Tape::constant(const Matrix& value) {
  Node n;
  n.rows = static_cast<std::uint32_t>(value.rows());
  n.cols = static_cast<std::uint32_t>(value.cols());
  n.value = value.data();
  return push(std::move(n));
}

Var Tape::scalar_constant(double value) { return constant(std::span<const double>(&value, 1)); }

Var Tape::parameter(std::span<const double> value, std::size_t offset) {
  Node n;
  n.rows = static_cast<std::uint32_t>(value.size());
  n.cols = 1;
  n.value.assign(value.begin(), value.end());
  n.grad_offset = offset;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value, std::size_t offset) {
  Node n;
  n.rows = static_cast<std::uint32_t>(value.rows());
  n.cols = static_cast<std::uint32_t>(value.cols());
  n.value = value.data();
  n.grad_offset = offset;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::matvec(Var a, Var x) {
  const Node& na = node(a);
  const Node& nx = node(x);
  require(nx.cols == 1 && na.cols == nx.rows, "matvec: inner dimensions disagree");
  Node n = make(Op::kMatVec, {a, x});
  n.rows = na.rows;
  n.cols = 1;
  n.value.resize(na.rows);
  for (std::size_t i = 0; i < na.rows; ++i) {
    n.value[i] = hipss::dot(std::span<const double>(na.value).subspan(i * na.cols, na.cols), nx.value);
  }
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.cols == nb.rows, "matmul: inner dimensions disagree");
  Node n = make(Op::kMatMul, {a, b});
  n.rows = na.rows;
  n.cols = nb.cols;
  n.value = hipss::matmul(Matrix(na.rows, na.cols, na.value), Matrix(nb.rows, nb.cols, nb.value)).data();
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.rows == nb.rows && na.cols == nb.cols, "add: shape mismatch");
  Node n = make(Op::kAdd, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  n.value = hipss::add(na.value, nb.value);
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.rows == nb.rows && na.cols == nb.cols, "hadamard: shape mismatch");
  Node n = make(Op::kHadamard, {a, b});
  n.rows = na.rows;
  n.cols = na.cols;
  n.value = hipss::hadamard(na.value, nb.value);
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  const Node& nx = node(x);
  Node n = make(Op::kScale, {x});
  n.rows = nx.rows;
  n.cols = nx.cols;
  n.aux = factor;
  n.value = nx.value;
  for (double& v : n.value) v *= factor;
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  const Node& nx = node(x);
  Node n = make(Op::kTanh, {x});
  n.rows = nx.rows;
  n.cols = nx.cols;
  n.value = hipss::tanh(nx.value);
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  const Node& nx = node(x);
  Node n = make(Op::kSigmoid, {x});
  n.rows = nx.rows;
  n.cols = nx.cols;
  n.value = hipss::sigmoid(std::span<const double>(nx.value));
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.size() == nb.value.size(), "dot: size mismatch");
  Node n = make(Op::kDot, {a, b});
  n.rows = 1;
  n.cols = 1;
  n.value = {hipss::dot(na.value, nb.value)};
  return push(std::move(n));
}

Var Tape::softmax(Var logits) {
  const Node& nl = node(logits);
  Node n = make(Op::kSoftmax, {logits});
  n.rows = nl.rows;
  n.cols = 1;
  n.value = hipss::softmax(nl.value);
  return push(std::move(n));
}

Var Tape::cosine(Var u, Var v) {
  const Node& nu = node(u);
  const Node& nv = node(v);
  require(nu.value.size() == nv.value.size(), "cosine: size mismatch");
  const double norm_u = hipss::norm(nu.value);
  const double norm_v = hipss::norm(nv.value);
  if (norm_u < kNormEps || norm_v < kNormEps) throw DegenerateVector("cosine: near-zero norm");
  Node n = make(Op::kCosine, {u, v});
  n.rows = 1;
  n.cols = 1;
  n.value = {hipss::dot(nu.value, nv.value) / (norm_u * norm_v)};
  n.saved = {norm_u, norm_v};
  return push(std::move(n));
}

Var Tape::l2_normalize(Var u) {
  const Node& nu = node(u);
  Node n = make(Op::kL2Normalize, {u});
  n.rows = nu.rows;
  n.cols = 1;
  n.value = hipss::l2_normalize(nu.value);
  n.aux = hipss::norm(nu.value);
  return push(std::move(n));
}

Var Tape::layernorm(Var x, Var gain, Var bias) {
  const Node& nx = node(x);
  const std::size_t d = nx.value.size();
  require(d >= 2, "layernorm: dim must be >= 2");
  require(node(gain).value.size() == d && node(bias).value.size() == d, "layernorm: shape mismatch");
  Node n = make(Op::kLayerNorm, {x, gain, bias});
  double mean = 0.0;
  for (double v : nx.value) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : nx.value) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  n.rows = nx.rows;
  n.cols = 1;
  n.aux = inv_std;
  n.saved.resize(d);
  n.value.resize(d);
  const auto& g = node(gain).value;
  const auto& b = node(bias).value;
  for (std::size_t i = 0; i < d; ++i) {
    n.saved[i] = (nx.value[i] - mean) * inv_std;
    n.value[i] = g[i] * n.saved[i] + b[i];
  }
  return push(std::move(n));
}

Var Tape::scale_shift(Var x, Var gamma, Var beta) {
  const Node& nx = node(x);
  const std::size_t d = nx.value.size();
  require(node(gamma).value.size() == d && node(beta).value.size() == d,
          "scale_shift: shape mismatch");
  Node n = make(Op::kScaleShift, {x, gamma, beta});
  n.rows = nx.rows;
  n.cols = 1;
  n.value.resize(d);
  const auto& g = node(gamma).value;
  const auto& b = node(beta).value;
  for (std::size_t i = 0; i < d; ++i) n.value[i] = g[i] * nx.value[i] + b[i];
  return push(std::move(n));
}

Var Tape::stack(std::span<const Var> scalars) {
  require(!scalars.empty(), "stack: empty input");
  Node n;
  n.op = Op::kStack;
  for (Var s : scalars) {
    const Node& ns = node(s);
    require(ns.value.size() == 1, "stack: inputs must be scalars");
    n.inputs.push_back(s.id);
    n.value.push_back(ns.value[0]);
    n.requires_grad = n.requires_grad || ns.requires_grad;
  }
  n.rows = static_cast<std::uint32_t>(scalars.size());
  n.cols = 1;
  return push(std::move(n));
}

Var Tape::sum(std::span<const Var> scalars, double factor) {
  require(!scalars.empty(), "sum: empty input");
  Node n;
  n.op = Op::kSum;
  n.aux = factor;
  double total = 0.0;
  for (Var s : scalars) {
    const Node& ns = node(s);
    require(ns.value.size() == 1, "sum: inputs must be scalars");
    n.inputs.push_back(s.id);
    total += ns.value[0];
    n.requires_grad = n.requires_grad || ns.requires_grad;
  }
  n.rows = 1;
  n.cols = 1;
  n.value = {factor * total};
  return push(std::move(n));
}

Var Tape::mean(std::span<const Var> vectors) {
  require(!vectors.empty(), "mean: empty input");
  Node n;
  n.op = Op::kMean;
  const std::size_t d = node(vectors.front()).value.size();
  n.value.assign(d, 0.0);
  for (Var v : vectors) {
    const Node& nv = node(v);
    require(nv.value.size() == d, "mean: size mismatch");
    n.inputs.push_back(v.id);
    for (std::size_t i = 0; i < d; ++i) n.value[i] += nv.value[i];
    n.requires_grad = n.requires_grad || nv.requires_grad;
  }
  const double inv = 1.0 / static_cast<double>(vectors.size());
  for (double& v : n.value) v *= inv;
  n.rows = static_cast<std::uint32_t>(d);
  n.cols = 1;
  return push(std::move(n));
}

Var Tape::weighted_sum(Var weights, std::span<const Var> vectors) {
  const Node& nw = node(weights);
  require(!vectors.empty() && nw.value.size() == vectors.size(), "weighted_sum: count mismatch");
  Node n;
  n.op = Op::kWeightedSum;
  n.inputs.push_back(weights.id);
  n.requires_grad = nw.requires_grad;
  const std::size_t d = node(vectors.front()).value.size();
  n.value.assign(d, 0.0);
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    const Node& nv = node(vectors[j]);
    require(nv.value.size() == d, "weighted_sum: size mismatch");
    n.inputs.push_back(vectors[j].id);
    for (std::size_t i = 0; i < d; ++i) n.value[i] += nw.value[j] * nv.value[i];
    n.requires_grad = n.requires_grad || nv.requires_grad;
  }
  n.rows = static_cast<std::uint32_t>(d);
  n.cols = 1;
  return push(std::move(n));
}

Var Tape::piecewise_linear(Var x, double slope) {
  const Node& nx = node(x);
  require(nx.value.size() == 1, "piecewise_linear: input must be a scalar");
  Node n = make(Op::kPiecewiseLinear, {x});
  n.rows = 1;
  n.cols = 1;
  n.aux = slope;
  n.value = {slope * nx.value[0]};
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::size_t label) {
  const Node& nl = node(logits);
  require(label < nl.value.size(), "cross_entropy: label out of range");
  Node n = make(Op::kCrossEntropy, {logits});
  n.saved = hipss::softmax(nl.value);
  const double mx = *std::max_element(nl.value.begin(), nl.value.end());
  double total = 0.0;
  for (double v : nl.value) total += std::exp(v - mx);
  n.rows = 1;
  n.cols = 1;
  n.label = label;
  n.value = {-(nl.value[label] - mx - std::log(total))};
  return push(std::move(n));
}

std::size_t Tape::backward(Var output, std::span<double> param_grad) const {
  const Node& out = node(output);
  require(out.value.size() == 1, "backward: output must be a scalar");
  std::vector<Vector> grads(output.id + 1);
  grads[output.id] = {1.0};
  std::size_t visited = 0;

  for (std::int64_t id = output.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Vector& g = grads[static_cast<std::size_t>(id)];
    if (g.empty() || !n.requires_grad) continue;
    ++visited;

    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    auto input = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k]]; };
    auto slot = [&](std::size_t k) -> Vector& {
      return grad_slot(grads, n.inputs[k], input(k).value.size());
    };

    switch (n.op) {
      case Op::kLeaf: {
        if (n.grad_offset != kNoGrad) {
          if (n.grad_offset + g.size() > param_grad.size()) {
            throw std::out_of_range("backward: parameter offset outside gradient buffer");
          }
          for (std::size_t i = 0; i < g.size(); ++i) param_grad[n.grad_offset + i] += g[i];
        }
        break;
      }
      case Op::kMatVec: {
        const Node& a = input(0);
        const Node& x = input(1);
        const std::size_t r = a.rows, c = a.cols;
        if (wants(0)) {
          Vector& ga = slot(0);
          for (std::size_t i = 0; i < r; ++i) {
            const double gi = g[i];
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gi * x.value[j];
          }
        }
        if (wants(1)) {
          Vector& gx = slot(1);
          for (std::size_t i = 0; i < r; ++i) {
            const double gi = g[i];
            for (std::size_t j = 0; j < c; ++j) gx[j] += a.value[i * c + j] * gi;
          }
        }
        break;
      }
      case Op::kMatMul: {
        const Node& a = input(0);
        const Node& b = input(1);
        const std::size_t r = a.rows, k = a.cols, c = b.cols;
        if (wants(0)) {
          Vector& ga = slot(0);  // G * B^T
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t j = 0; j < c; ++j) ga[i * k + p] += g[i * c + j] * b.value[p * c + j];
        }
        if (wants(1)) {
          Vector& gb = slot(1);  // A^T * G
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t j = 0; j < c; ++j) gb[p * c + j] += a.value[i * k + p] * g[i * c + j];
        }
        break;
      }
      case Op::kAdd: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants(k)) continue;
          Vector& gk = slot(k);
          for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
        }
        break;
      }
      case Op::kHadamard: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants(k)) continue;
          const Vector& other = input(1 - k).value;
          Vector& gk = slot(k);
          for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i] * other[i];
        }
        break;
      }
      case Op::kScale: {
        Vector& gx = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.aux * g[i];
        break;
      }
      case Op::kTanh: {
        Vector& gx = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::kSigmoid: {
        Vector& gx = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::kDot: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants(k)) continue;
          const Vector& other = input(1 - k).value;
          Vector& gk = slot(k);
          for (std::size_t i = 0; i < other.size(); ++i) gk[i] += g[0] * other[i];
        }
        break;
      }
      case Op::kSoftmax: {
        const double gy = hipss::dot(g, n.value);
        Vector& gx = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.value[i] * (g[i] - gy);
        break;
      }
      case Op::kCosine: {
        const double c = n.value[0];
        const double norm_u = n.saved[0], norm_v = n.saved[1];
        const Vector& u = input(0).value;
        const Vector& v = input(1).value;
        if (wants(0)) {
          Vector& gu = slot(0);
          for (std::size_t i = 0; i < u.size(); ++i)
            gu[i] += g[0] * (v[i] / (norm_u * norm_v) - c * u[i] / (norm_u * norm_u));
        }
        if (wants(1)) {
          Vector& gv = slot(1);
          for (std::size_t i = 0; i < v.size(); ++i)
            gv[i] += g[0] * (u[i] / (norm_u * norm_v) - c * v[i] / (norm_v * norm_v));
        }
        break;
      }
      case Op::kL2Normalize: {
        const double gy = hipss::dot(g, n.value);
        Vector& gx = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - gy * n.value[i]) / n.aux;
        break;
      }
      case Op::kLayerNorm: {
        const std::size_t d = g.size();
        const Vector& xhat = n.saved;
        const Vector& gain = input(1).value;
        if (wants(1)) {
          Vector& gg = slot(1);
          for (std::size_t i = 0; i < d; ++i) gg[i] += g[i] * xhat[i];
        }
        if (wants(2)) {
          Vector& gb = slot(2);
          for (std::size_t i = 0; i < d; ++i) gb[i] += g[i];
        }
        if (wants(0)) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double dxh = g[i] * gain[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[i];
          }
          const double dn = static_cast<double>(d);
          Vector& gx = slot(0);
          for (std::size_t i = 0; i < d; ++i) {
            const double dxh = g[i] * gain[i];
            gx[i] += n.aux * (dxh - sum_dxhat / dn - xhat[i] * sum_dxhat_xhat / dn);
          }
        }
        break;
      }
      case Op::kScaleShift: {
        const Vector& x = input(0).value;
        const Vector& gamma = input(1).value;
        if (wants(0)) {
          Vector& gx = slot(0);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gamma[i];
        }
        if (wants(1)) {
          Vector& gg = slot(1);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i] += g[i] * x[i];
        }
        if (wants(2)) {
          Vector& gb = slot(2);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::kStack: {
        for (std::size_t k = 0; k < n.inputs.size(); ++k)
          if (wants(k)) slot(k)[0] += g[k];
        break;
      }
      case Op::kSum: {
        for (std::size_t k = 0; k < n.inputs.size(); ++k)
          if (wants(k)) slot(k)[0] += n.aux * g[0];
        break;
      }
      case Op::kMean: {
        const double inv = 1.0 / static_cast<double>(n.inputs.size());
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          if (!wants(k)) continue;
          Vector& gk = slot(k);
          for (std::size_t i = 0; i < g.size(); ++i) gk[i] += inv * g[i];
        }
        break;
      }
      case Op::kWeightedSum: {
        const Vector& w = input(0).value;
        const std::size_t count = n.inputs.size() - 1;
        if (wants(0)) {
          Vector& gw = slot(0);
          for (std::size_t j = 0; j < count; ++j) gw[j] += hipss::dot(g, input(j + 1).value);
        }
        for (std::size_t j = 0; j < count; ++j) {
          if (!wants(j + 1)) continue;
          Vector& gh = slot(j + 1);
          for (std::size_t i = 0; i < g.size(); ++i) gh[i] += w[j] * g[i];
        }
        break;
      }
      case Op::kPiecewiseLinear: {
        slot(0)[0] += n.aux * g[0];
        break;
      }
      case Op::kCrossEntropy: {
        Vector& gl = slot(0);
        for (std::size_t i = 0; i < gl.size(); ++i)
          gl[i] += g[0] * (n.saved[i] - (i == n.label ? 1.0 : 0.0));
        break;
      }
    }
  }
  return visited;
}

}  // namespace hipss::ad
