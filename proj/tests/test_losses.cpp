#include <doctest.h>

#include <cmath>
#include <random>

#include "fedface/losses.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fedface;

namespace {

Matrix mat(std::vector<Vector> rows) { return oracle::rows_to_matrix(rows); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("pos_loss values") {
    const PosLossConfig cfg{0.9};
    const auto inside = pos_loss(Vector{1, 0}, Vector{1, 0}, cfg);
    CHECK(inside.loss == 0.0);
    CHECK(inside.grad_f == Vector{0, 0});
    CHECK(inside.grad_w == Vector{0, 0});
    CHECK(pos_loss(Vector{1, 0}, Vector{0, 1}, cfg).loss == doctest::Approx(0.81).epsilon(1e-15));
    CHECK(pos_loss(Vector{1, 0}, Vector{-1, 0}, cfg).loss == doctest::Approx(3.61).epsilon(1e-15));
    CHECK_THROWS_AS(pos_loss(Vector{2, 0}, Vector{1, 0}, cfg), UnitNormError);
    CHECK_THROWS_AS(PosLossConfig{0.0}.validate(), ConfigError);
    CHECK_THROWS_AS(PosLossConfig{1.5}.validate(), ConfigError);
  }

  TEST_CASE("pos_loss gradients vanish exactly once the margin is met") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 50; ++k) {
      const Vector w = oracle::random_unit(5, rng);
      Vector f = w;
      f[0] += 0.05;
      f = oracle::unit(f);
      const auto l = pos_loss(f, w, PosLossConfig{0.9});
      CHECK(l.loss == 0.0);
      for (double g : l.grad_f) CHECK(g == 0.0);
      for (double g : l.grad_w) CHECK(g == 0.0);
    }
  }

  TEST_CASE("full_loss values") {
    FullLossConfig cfg;
    // f = w_y and the only negative is antipodal (distance 2 >= v).
    CHECK(full_loss(Vector{1, 0}, 0, mat({{1, 0}, {-1, 0}}), cfg).loss == 0.0);

    cfg.beta = 0.0;
    cfg.alpha = 1.7;
    const Vector f{0.6, 0.8};
    const Matrix w = mat({{1, 0}, {0, 1}, {-0.8, 0.6}});
    CHECK(full_loss(f, 0, w, cfg).loss == doctest::Approx(1.7 * 0.4 * 0.4).epsilon(1e-14));

    // Hand evaluation: d(f, w0) = 0.4, d(f, w1) = 0.2, d(f, w2) = 1.
    // 1 * 0.4^2 + 0.5 * (max(0, 1 - 0.2)^2 + max(0, 1 - 1)^2) = 0.48
    cfg.alpha = 1.0;
    cfg.beta = 0.5;
    CHECK(full_loss(f, 0, w, cfg).loss == doctest::Approx(0.48).epsilon(1e-14));
    CHECK(full_loss(f, 0, w, cfg).loss ==
          doctest::Approx(oracle::full_formula(f, 0, oracle::matrix_rows(w), 1.0, 0.5, 1.0,
                                               Distance::Cosine))
              .epsilon(1e-14));

    cfg.distance = Distance::SquaredEuclidean;
    CHECK(full_loss(f, 0, w, cfg).loss ==
          doctest::Approx(oracle::full_formula(f, 0, oracle::matrix_rows(w), 1.0, 0.5, 1.0,
                                               Distance::SquaredEuclidean))
              .epsilon(1e-14));
    CHECK_THROWS_AS(full_loss(f, 3, w, cfg), ConfigError);
  }

  TEST_CASE("full_loss is invariant to permuting the negative classes") {
    std::mt19937_64 rng(12);
    FullLossConfig cfg;
    cfg.v_margin = 1.5;
    for (int k = 0; k < 20; ++k) {
      std::vector<Vector> w;
      for (int c = 0; c < 5; ++c) w.push_back(oracle::random_unit(4, rng));
      const Vector f = oracle::random_unit(4, rng);
      const double base = full_loss(f, 0, mat(w), cfg).loss;
      std::shuffle(w.begin() + 1, w.end(), rng);
      CHECK(full_loss(f, 0, mat(w), cfg).loss == doctest::Approx(base).epsilon(1e-14));
    }
  }

  TEST_CASE("spreadout values") {
    SpreadoutConfig cfg;
    CHECK(spreadout(mat({{1, 0}, {0, 1}}), cfg).reg == 0.0);
    CHECK(spreadout(mat({{1, 0}, {1, 0}}), cfg).reg == doctest::Approx(2.0).epsilon(1e-15));
    const double s = std::sqrt(3.0) / 2.0;
    const Matrix tri = mat({{1, 0}, {-0.5, s}, {-0.5, -s}});
    CHECK(spreadout(tri, cfg).reg == 0.0);
    CHECK_THROWS_AS(spreadout(mat({{1, 0}}), cfg), NotEnoughClassesError);
  }

  TEST_CASE("spreadout of perturbed rows matches a brute-force pair sum") {
    std::mt19937_64 rng(2);
    const double s = std::sqrt(3.0) / 2.0;
    for (int k = 0; k < 30; ++k) {
      SpreadoutConfig cfg;
      cfg.v_margin = 0.6 + 0.6 * (k % 3);
      cfg.distance = k % 2 ? Distance::Cosine : Distance::SquaredEuclidean;
      std::vector<Vector> w{{1, 0}, {-0.5, s}, {-0.5, -s}};
      for (auto& r : w) {
        for (double& x : r) x += 0.3 * oracle::random_vector(1, rng)[0];
        r = oracle::unit(r);
      }
      const double brute = oracle::spreadout_formula(w, cfg.v_margin, cfg.distance);
      CHECK(spreadout(mat(w), cfg).reg == doctest::Approx(brute).epsilon(1e-13));
      CHECK(spreadout(mat(w), cfg).reg >= 0.0);
      std::reverse(w.begin(), w.end());
      CHECK(spreadout(mat(w), cfg).reg == doctest::Approx(brute).epsilon(1e-13));
    }
  }

  TEST_CASE("spreadout is zero exactly when every pair meets the margin") {
    std::mt19937_64 rng(17);
    SpreadoutConfig cfg;
    for (int k = 0; k < 100; ++k) {
      std::vector<Vector> w;
      for (int c = 0; c < 4; ++c) w.push_back(oracle::random_unit(3, rng));
      bool all_far = true;
      for (std::size_t a = 0; a < w.size(); ++a) {
        for (std::size_t b = a + 1; b < w.size(); ++b) {
          all_far &= oracle::dist(Distance::Cosine, w[a], w[b]) >= cfg.v_margin;
        }
      }
      CHECK((spreadout(mat(w), cfg).reg == 0.0) == all_far);
    }
  }

  TEST_CASE("am_softmax values") {
    // s = 1, m = 0 is softmax cross-entropy over cosine logits.
    AmSoftmaxConfig plain{1.0, 0.0};
    const Vector f = oracle::unit({0.3, -0.4, 0.5});
    std::mt19937_64 rng(6);
    std::vector<Vector> w;
    for (int c = 0; c < 4; ++c) w.push_back(oracle::random_unit(3, rng));
    double denom = 0.0;
    for (const auto& r : w) denom += std::exp(oracle::dotp(f, r));
    const double ce = -std::log(std::exp(oracle::dotp(f, w[2])) / denom);
    CHECK(am_softmax(f, 2, mat(w), plain).loss == doctest::Approx(ce).epsilon(1e-13));

    const AmSoftmaxConfig desk{30.0, 0.35};
    CHECK(am_softmax(Vector{1, 0}, 0, mat({{1, 0}, {-1, 0}}), desk).loss < 1e-8);

    // Evaluated to 30 digits with arbitrary-precision arithmetic.
    const double r = 1.0 / std::sqrt(3.0);
    const double h = 1.0 / std::sqrt(2.0);
    const Matrix w4 = mat({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-h, h, 0}});
    CHECK(am_softmax(Vector{r, r, r}, 0, w4, desk).loss ==
          doctest::Approx(11.1931609637130560561).epsilon(1e-12));
    CHECK_THROWS_AS(am_softmax(Vector{r, r, r}, 4, w4, desk), ConfigError);
    CHECK_THROWS_AS((AmSoftmaxConfig{0.0, 0.1}.validate()), ConfigError);
  }

  TEST_CASE("analytic gradients match central differences") {
    std::mt19937_64 rng(31);
    for (const auto& r : {gradcheck::check_pos_loss(rng, 20), gradcheck::check_full_loss(rng, 20),
                          gradcheck::check_spreadout(rng, 20), gradcheck::check_am_softmax(rng, 20)}) {
      INFO(r.name);
      CHECK(r.cases == 20);
      CHECK(r.max_rel < 1e-5);
    }
  }
}
