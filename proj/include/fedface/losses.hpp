#pragma once

#include <cstddef>
#include <span>

#include "fedface/numerics.hpp"

namespace fedface {

// Distance between two embeddings.
//   Cosine:           d(a, b) = 1 - a.b
//   SquaredEuclidean: d(a, b) = ||a - b||^2   (= 2 (1 - a.b) on the unit sphere)
enum class Distance { Cosine, SquaredEuclidean };

double distance(Distance kind, std::span<const double> a, std::span<const double> b);

// Gradient of distance(kind, a, b) with respect to a.
Vector distance_grad(Distance kind, std::span<const double> a, std::span<const double> b);

// Inputs further than this from unit norm are rejected by the losses.
inline constexpr double kUnitTolerance = 1e-9;

struct FullLossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double v_margin = 1.0;
  Distance distance = Distance::Cosine;

  void validate() const;
};

struct PosLossConfig {
  double m_margin = 0.9;

  void validate() const;
};

struct SpreadoutConfig {
  double v_margin = 1.0;
  double lambda_weight = 10.0;
  // Server learning rate; the step is W <- W - step_size * lambda * grad.
  double step_size = 0.001;
  Distance distance = Distance::Cosine;

  void validate() const;
};

struct AmSoftmaxConfig {
  double scale = 30.0;
  double margin = 0.35;

  void validate() const;
};

struct VectorLoss {
  double loss = 0.0;
  Vector grad_f;
  Vector grad_w;
};

struct MatrixLoss {
  double loss = 0.0;
  Vector grad_f;
  Matrix grad_w;
};

// alpha d(f, w_y)^2 + beta sum_{c != y} max(0, v - d(f, w_c))^2
MatrixLoss full_loss(std::span<const double> f, std::size_t y, const Matrix& w,
                     const FullLossConfig& cfg);

// max(0, m - w.f)^2. Gradients are exactly zero when w.f >= m.
VectorLoss pos_loss(std::span<const double> f, std::span<const double> w,
                    const PosLossConfig& cfg);

// sum over ordered pairs c != c' of max(0, v - d(w_c, w_c'))^2. The returned
// value excludes lambda.
struct SpreadoutResult {
  double reg = 0.0;
  Matrix grad_w;
};
SpreadoutResult spreadout(const Matrix& w, const SpreadoutConfig& cfg);

// Additive-margin softmax over cosine logits: s (cos_y - m) for the target
// class and s cos_c otherwise.
MatrixLoss am_softmax(std::span<const double> f, std::size_t y, const Matrix& w,
                      const AmSoftmaxConfig& cfg);

}  // namespace fedface
