#include "fedface/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedface {
namespace {

void require_unit(std::span<const double> v, const char* what) {
  const double n = norm2(v);
  if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
    throw UnitNormError(std::string(what) + " is not unit-norm (norm " + std::to_string(n) + ")");
  }
}

void require_unit_rows(const Matrix& w, const char* what) {
  for (std::size_t r = 0; r < w.rows(); ++r) require_unit(w.row(r), what);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace

double distance(Distance kind, std::span<const double> a, std::span<const double> b) {
  switch (kind) {
    case Distance::Cosine:
      return 1.0 - dot(a, b);
    case Distance::SquaredEuclidean: {
      if (a.size() != b.size()) throw ShapeError("distance: length mismatch");
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return s;
    }
  }
  throw ConfigError("distance: unknown kind");
}

Vector distance_grad(Distance kind, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("distance_grad: length mismatch");
  Vector g(a.size());
  switch (kind) {
    case Distance::Cosine:
      for (std::size_t i = 0; i < a.size(); ++i) g[i] = -b[i];
      return g;
    case Distance::SquaredEuclidean:
      for (std::size_t i = 0; i < a.size(); ++i) g[i] = 2.0 * (a[i] - b[i]);
      return g;
  }
  throw ConfigError("distance_grad: unknown kind");
}

void FullLossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0)) {
    throw ConfigError("full loss: alpha, beta must be nonnegative with positive sum");
  }
  if (!(v_margin > 0.0 && v_margin <= 2.0)) throw ConfigError("full loss: v must lie in (0, 2]");
}

void PosLossConfig::validate() const {
  if (!(m_margin > 0.0 && m_margin <= 1.0)) throw ConfigError("pos loss: m must lie in (0, 1]");
}

void SpreadoutConfig::validate() const {
  if (!(v_margin > 0.0 && v_margin <= 2.0)) throw ConfigError("spreadout: v must lie in (0, 2]");
  if (!(lambda_weight >= 0.0)) throw ConfigError("spreadout: lambda must be nonnegative");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("spreadout: step size must be finite and nonnegative");
  }
}

void AmSoftmaxConfig::validate() const {
  if (!(scale > 0.0)) throw ConfigError("am-softmax: scale must be positive");
  if (!(margin >= 0.0)) throw ConfigError("am-softmax: margin must be nonnegative");
}

MatrixLoss full_loss(std::span<const double> f, std::size_t y, const Matrix& w,
                     const FullLossConfig& cfg) {
  cfg.validate();
  if (y >= w.rows()) throw ConfigError("full loss: label " + std::to_string(y) + " out of range");
  if (f.size() != w.cols()) throw ShapeError("full loss: embedding dim mismatch");
  require_unit(f, "instance embedding");
  require_unit_rows(w, "class embedding");

  MatrixLoss out;
  out.grad_f.assign(f.size(), 0.0);
  out.grad_w = Matrix(w.rows(), w.cols());

  const double dy = distance(cfg.distance, f, w.row(y));
  out.loss = cfg.alpha * dy * dy;
  if (dy != 0.0) {
    axpy(2.0 * cfg.alpha * dy, distance_grad(cfg.distance, f, w.row(y)), out.grad_f);
    axpy(2.0 * cfg.alpha * dy, distance_grad(cfg.distance, w.row(y), f), out.grad_w.row(y));
  }
  for (std::size_t c = 0; c < w.rows(); ++c) {
    if (c == y) continue;
    const double h = cfg.v_margin - distance(cfg.distance, f, w.row(c));
    if (h <= 0.0) continue;
    out.loss += cfg.beta * h * h;
    axpy(-2.0 * cfg.beta * h, distance_grad(cfg.distance, f, w.row(c)), out.grad_f);
    axpy(-2.0 * cfg.beta * h, distance_grad(cfg.distance, w.row(c), f), out.grad_w.row(c));
  }
  return out;
}

VectorLoss pos_loss(std::span<const double> f, std::span<const double> w,
                    const PosLossConfig& cfg) {
  cfg.validate();
  if (f.size() != w.size()) throw ShapeError("pos loss: embedding dim mismatch");
  require_unit(f, "instance embedding");
  require_unit(w, "class embedding");

  VectorLoss out;
  out.grad_f.assign(f.size(), 0.0);
  out.grad_w.assign(w.size(), 0.0);
  const double h = cfg.m_margin - dot(w, f);
  if (h <= 0.0) return out;
  out.loss = h * h;
  for (std::size_t i = 0; i < f.size(); ++i) {
    out.grad_f[i] = -2.0 * h * w[i];
    out.grad_w[i] = -2.0 * h * f[i];
  }
  return out;
}

SpreadoutResult spreadout(const Matrix& w, const SpreadoutConfig& cfg) {
  cfg.validate();
  if (w.rows() < 2) {
    throw NotEnoughClassesError("spreadout needs at least 2 class embeddings, got " +
                                std::to_string(w.rows()));
  }
  require_unit_rows(w, "class embedding");

  SpreadoutResult out;
  out.grad_w = Matrix(w.rows(), w.cols());
  // Each unordered pair appears twice in the ordered sum.
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = i + 1; j < w.rows(); ++j) {
      const double h = cfg.v_margin - distance(cfg.distance, w.row(i), w.row(j));
      if (h <= 0.0) continue;
      out.reg += 2.0 * h * h;
      axpy(-4.0 * h, distance_grad(cfg.distance, w.row(i), w.row(j)), out.grad_w.row(i));
      axpy(-4.0 * h, distance_grad(cfg.distance, w.row(j), w.row(i)), out.grad_w.row(j));
    }
  }
  return out;
}

MatrixLoss am_softmax(std::span<const double> f, std::size_t y, const Matrix& w,
                      const AmSoftmaxConfig& cfg) {
  cfg.validate();
  if (y >= w.rows()) throw ConfigError("am-softmax: label " + std::to_string(y) + " out of range");
  if (f.size() != w.cols()) throw ShapeError("am-softmax: embedding dim mismatch");
  require_unit(f, "instance embedding");
  require_unit_rows(w, "class embedding");

  const std::size_t classes = w.rows();
  Vector logits(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    logits[c] = cfg.scale * (dot(w.row(c), f) - (c == y ? cfg.margin : 0.0));
  }
  const double shift = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  Vector p(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    p[c] = std::exp(logits[c] - shift);
    sum += p[c];
  }
  for (double& pc : p) pc /= sum;

  MatrixLoss out;
  out.loss = std::log(sum) - (logits[y] - shift);
  out.grad_f.assign(f.size(), 0.0);
  out.grad_w = Matrix(classes, w.cols());
  for (std::size_t c = 0; c < classes; ++c) {
    const double coeff = cfg.scale * (p[c] - (c == y ? 1.0 : 0.0));
    axpy(coeff, w.row(c), out.grad_f);
    axpy(coeff, f, out.grad_w.row(c));
  }
  return out;
}

}  // namespace fedface
