#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fedface/errors.hpp"

namespace fedface {

using Vector = std::vector<double>;

// Norms at or below this are rejected by l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
bool all_finite(std::span<const double> v);

// Throws DegenerateEmbeddingError when ||v|| <= kNormEpsilon.
Vector l2_normalize(std::span<const double> v);

// Chains a gradient taken w.r.t. u = raw/||raw|| back to raw:
// (I - u u^T) grad_unit / ||raw||.
Vector l2_normalize_backward(std::span<const double> raw, std::span<const double> grad_unit);

// Deterministic stream derivation (splitmix64 mixing), stable across
// platforms and standard library implementations.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// Layer dimensions of an EmbeddingNet: (input_dim, hidden..., d).
//
// Parameters are laid out layer by layer; each layer stores its weight
// matrix (out x in, row-major) followed by its bias (out).
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<std::size_t> dims);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t num_layers() const noexcept { return dims_.empty() ? 0 : dims_.size() - 1; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  std::size_t param_count() const noexcept { return param_count_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + dims_[layer] * dims_[layer + 1];
  }

  friend bool operator==(const Layout& a, const Layout& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
};

// Flattened feature-extractor parameters; the unit exchanged between the
// server and its clients.
struct ParamVector {
  Layout layout;
  Vector values;

  ParamVector() = default;
  explicit ParamVector(Layout l) : layout(std::move(l)), values(layout.param_count(), 0.0) {}
  ParamVector(Layout l, Vector v);

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

// Feedforward network with tanh hidden activations and a linear output layer.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  explicit EmbeddingNet(Layout layout);
  EmbeddingNet(Layout layout, Vector params);

  // Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
  static EmbeddingNet glorot(Layout layout, std::mt19937_64& rng);

  const Layout& layout() const noexcept { return layout_; }
  std::size_t input_dim() const { return layout_.input_dim(); }
  std::size_t output_dim() const { return layout_.output_dim(); }

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  std::span<const double> weights(std::size_t layer) const;
  std::span<double> weights(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);

  friend bool operator==(const EmbeddingNet&, const EmbeddingNet&) = default;

 private:
  Layout layout_;
  Vector params_;
};

// Activations of every layer for one input; activations[0] is the input and
// activations.back() the raw embedding.
struct ForwardTrace {
  std::vector<Vector> activations;

  const Vector& output() const { return activations.back(); }
};

Vector forward(const EmbeddingNet& net, std::span<const double> x);
ForwardTrace forward_trace(const EmbeddingNet& net, std::span<const double> x);

// Adds scale * d(grad_out . forward(net, x))/d(theta) into grad (length
// param_count) using a trace from forward_trace.
void accumulate_backward(const EmbeddingNet& net, const ForwardTrace& trace,
                         std::span<const double> grad_out, std::span<double> grad,
                         double scale = 1.0);

// d(grad_out . forward(net, x))/d(theta).
ParamVector backward(const EmbeddingNet& net, std::span<const double> x,
                     std::span<const double> grad_out);

// Same, with grad_unit taken w.r.t. the l2-normalized embedding.
ParamVector backward_normalized(const EmbeddingNet& net, std::span<const double> x,
                                std::span<const double> grad_unit);

ParamVector flatten(const EmbeddingNet& net);
EmbeddingNet unflatten(const ParamVector& p, const Layout& layout);

}  // namespace fedface
