#include "fedface/numerics.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace fedface {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Vector l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kNormEpsilon)) {
    throw DegenerateEmbeddingError("l2_normalize: norm " + std::to_string(n) +
                                   " at or below epsilon");
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

Vector l2_normalize_backward(std::span<const double> raw, std::span<const double> grad_unit) {
  if (raw.size() != grad_unit.size()) throw ShapeError("l2_normalize_backward: length mismatch");
  const double n = norm2(raw);
  if (!(n > kNormEpsilon)) throw DegenerateEmbeddingError("l2_normalize_backward: zero norm");
  double proj = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) proj += raw[i] * grad_unit[i];
  proj /= n;
  Vector out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = (grad_unit[i] - (raw[i] / n) * proj) / n;
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ShapeError("Matrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Layout::Layout(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw LayoutError("layout needs at least input and output dims");
  for (auto d : dims_) {
    if (d == 0) throw LayoutError("layout dims must be positive");
  }
  offsets_.reserve(num_layers());
  for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
    offsets_.push_back(param_count_);
    param_count_ += dims_[k] * dims_[k + 1] + dims_[k + 1];
  }
}

ParamVector::ParamVector(Layout l, Vector v) : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != layout.param_count()) {
    throw LayoutError("ParamVector: " + std::to_string(values.size()) +
                      " values for a layout of " + std::to_string(layout.param_count()));
  }
}

EmbeddingNet::EmbeddingNet(Layout layout)
    : layout_(std::move(layout)), params_(layout_.param_count(), 0.0) {}

EmbeddingNet::EmbeddingNet(Layout layout, Vector params)
    : layout_(std::move(layout)), params_(std::move(params)) {
  if (params_.size() != layout_.param_count()) {
    throw LayoutError("EmbeddingNet: parameter count does not match layout");
  }
}

EmbeddingNet EmbeddingNet::glorot(Layout layout, std::mt19937_64& rng) {
  EmbeddingNet net(std::move(layout));
  const auto& dims = net.layout().dims();
  for (std::size_t k = 0; k < net.layout().num_layers(); ++k) {
    const double a = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& w : net.weights(k)) w = dist(rng);
  }
  return net;
}

std::span<const double> EmbeddingNet::weights(std::size_t layer) const {
  const auto& d = layout_.dims();
  return std::span<const double>(params_).subspan(layout_.weight_offset(layer),
                                                  d[layer] * d[layer + 1]);
}

std::span<double> EmbeddingNet::weights(std::size_t layer) {
  const auto& d = layout_.dims();
  return std::span<double>(params_).subspan(layout_.weight_offset(layer), d[layer] * d[layer + 1]);
}

std::span<const double> EmbeddingNet::bias(std::size_t layer) const {
  return std::span<const double>(params_).subspan(layout_.bias_offset(layer),
                                                  layout_.dims()[layer + 1]);
}

std::span<double> EmbeddingNet::bias(std::size_t layer) {
  return std::span<double>(params_).subspan(layout_.bias_offset(layer), layout_.dims()[layer + 1]);
}

ForwardTrace forward_trace(const EmbeddingNet& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw ShapeError("forward: input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(net.input_dim()));
  }
  const auto& dims = net.layout().dims();
  const std::size_t layers = net.layout().num_layers();
  ForwardTrace trace;
  trace.activations.reserve(layers + 1);
  trace.activations.emplace_back(x.begin(), x.end());
  for (std::size_t k = 0; k < layers; ++k) {
    const auto w = net.weights(k);
    const auto b = net.bias(k);
    const Vector& in = trace.activations.back();
    Vector out(dims[k + 1]);
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = b[o];
      const double* wr = w.data() + o * dims[k];
      for (std::size_t i = 0; i < dims[k]; ++i) s += wr[i] * in[i];
      out[o] = (k + 1 < layers) ? std::tanh(s) : s;
    }
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

Vector forward(const EmbeddingNet& net, std::span<const double> x) {
  return std::move(forward_trace(net, x).activations.back());
}

void accumulate_backward(const EmbeddingNet& net, const ForwardTrace& trace,
                         std::span<const double> grad_out, std::span<double> grad,
                         double scale) {
  if (grad_out.size() != net.output_dim()) {
    throw ShapeError("backward: grad_out has length " + std::to_string(grad_out.size()) +
                     ", expected " + std::to_string(net.output_dim()));
  }
  if (grad.size() != net.layout().param_count()) throw LayoutError("backward: gradient size");
  const auto& layout = net.layout();
  const auto& dims = layout.dims();

  // delta holds d(loss)/d(pre-activation) of the current layer.
  Vector delta(grad_out.begin(), grad_out.end());
  for (std::size_t k = layout.num_layers(); k-- > 0;) {
    const Vector& in = trace.activations[k];
    double* gw = grad.data() + layout.weight_offset(k);
    double* gb = grad.data() + layout.bias_offset(k);
    for (std::size_t o = 0; o < dims[k + 1]; ++o) {
      const double d = scale * delta[o];
      gb[o] += d;
      for (std::size_t i = 0; i < dims[k]; ++i) gw[o * dims[k] + i] += d * in[i];
    }
    if (k == 0) break;
    const auto w = net.weights(k);
    Vector prev(dims[k], 0.0);
    for (std::size_t o = 0; o < dims[k + 1]; ++o) {
      const double* wr = w.data() + o * dims[k];
      for (std::size_t i = 0; i < dims[k]; ++i) prev[i] += wr[i] * delta[o];
    }
    for (std::size_t i = 0; i < dims[k]; ++i) prev[i] *= 1.0 - in[i] * in[i];  // tanh'
    delta = std::move(prev);
  }
}

ParamVector backward(const EmbeddingNet& net, std::span<const double> x,
                     std::span<const double> grad_out) {
  ParamVector g(net.layout());
  accumulate_backward(net, forward_trace(net, x), grad_out, g.values);
  return g;
}

ParamVector backward_normalized(const EmbeddingNet& net, std::span<const double> x,
                                std::span<const double> grad_unit) {
  const auto trace = forward_trace(net, x);
  const Vector grad_raw = l2_normalize_backward(trace.output(), grad_unit);
  ParamVector g(net.layout());
  accumulate_backward(net, trace, grad_raw, g.values);
  return g;
}

ParamVector flatten(const EmbeddingNet& net) {
  return ParamVector(net.layout(), Vector(net.params().begin(), net.params().end()));
}

EmbeddingNet unflatten(const ParamVector& p, const Layout& layout) {
  if (!(p.layout == layout)) throw LayoutError("unflatten: layout mismatch");
  return EmbeddingNet(layout, p.values);
}

}  // namespace fedface
