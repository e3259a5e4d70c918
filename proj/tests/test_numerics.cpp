#include <doctest.h>

#include <cmath>
#include <random>

#include "fedface/numerics.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fedface;

TEST_SUITE("numerics") {
  TEST_CASE("zero parameters give a zero embedding") {
    const EmbeddingNet net(Layout({3, 5, 4}));
    const Vector out = forward(net, Vector{0.7, -1.2, 3.0});
    CHECK(out == Vector(4, 0.0));
  }

  TEST_CASE("single identity layer passes the input through") {
    EmbeddingNet net(Layout({2, 2}), Vector{1, 0, 0, 1, 0, 0});
    const Vector out = forward(net, Vector{0.3, -0.2});
    CHECK(out[0] == 0.3);
    CHECK(out[1] == -0.2);
  }

  TEST_CASE("two-layer net matches a hand-evaluated tanh composition") {
    // W1 = [[0.5, -0.25], [0.1, 0.3]], b1 = (0.05, -0.1)
    // W2 = [[0.7, -0.4], [-0.6, 0.9]], b2 = (0.2, -0.05)
    const EmbeddingNet net(Layout({2, 2, 2}), Vector{0.5, -0.25, 0.1, 0.3, 0.05, -0.1, 0.7, -0.4,
                                                     -0.6, 0.9, 0.2, -0.05});
    const Vector out = forward(net, Vector{0.3, -0.2});
    // Evaluated to 30 digits with arbitrary-precision arithmetic.
    CHECK(out[0] == doctest::Approx(0.423152097125019723806).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(-0.313296522687677977518).epsilon(1e-14));
  }

  TEST_CASE("forward rejects a wrong input length") {
    const EmbeddingNet net(Layout({3, 2}));
    CHECK_THROWS_AS(forward(net, Vector{1.0, 2.0}), ShapeError);
  }

  TEST_CASE("l2_normalize") {
    const Vector a = l2_normalize(Vector{3.0, 4.0});
    CHECK(a[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(0.8).epsilon(1e-15));
    const Vector u{0.6, 0.8};
    const Vector b = l2_normalize(u);
    CHECK(std::abs(b[0] - 0.6) < 1e-15);
    CHECK(std::abs(b[1] - 0.8) < 1e-15);
    CHECK_THROWS_AS(l2_normalize(Vector{0.0, 0.0}), DegenerateEmbeddingError);
    CHECK_THROWS_AS(l2_normalize(Vector{1e-13, 0.0}), DegenerateEmbeddingError);

    std::mt19937_64 rng(3);
    for (int k = 0; k < 200; ++k) {
      std::uniform_real_distribution<double> scale(-8, 8);
      const Vector v = oracle::random_vector(1 + k % 9, rng, std::pow(10.0, scale(rng)));
      const Vector n = l2_normalize(v);
      CHECK(std::abs(norm2(n) - 1.0) < 1e-12);
    }
  }

  TEST_CASE("backward with zero upstream gradient is zero") {
    std::mt19937_64 rng(5);
    const EmbeddingNet net = EmbeddingNet::glorot(Layout({4, 6, 3}), rng);
    const ParamVector g = backward(net, Vector{0.1, 0.2, 0.3, 0.4}, Vector(3, 0.0));
    CHECK(g.values == Vector(net.layout().param_count(), 0.0));
  }

  TEST_CASE("linear identity net: weight gradient row one equals the input") {
    const EmbeddingNet net(Layout({3, 3}), Vector{1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
    const Vector x{0.4, -1.5, 2.5};
    const ParamVector g = backward(net, x, Vector{1, 0, 0});
    CHECK(g.values[0] == 0.4);
    CHECK(g.values[1] == -1.5);
    CHECK(g.values[2] == 2.5);
    for (std::size_t i = 3; i < 9; ++i) CHECK(g.values[i] == 0.0);
    CHECK(g.values[9] == 1.0);  // bias of output 1
  }

  TEST_CASE("backward matches central differences of the raw output") {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 20; ++k) {
      const std::vector<std::size_t> dims{3, 5, 4, 2};
      const Layout layout(dims);
      const Vector params = oracle::random_vector(layout.param_count(), rng, 0.8);
      const EmbeddingNet net(layout, params);
      const Vector x = oracle::random_vector(3, rng);
      const Vector gout = oracle::random_vector(2, rng);
      const Vector fd = oracle::fd_gradient(
          [&](const Vector& p) { return oracle::dotp(gout, oracle::net_formula(dims, p, x)); },
          params);
      CHECK(oracle::rel_error(backward(net, x, gout).values, fd) < 1e-5);
    }
  }

  TEST_CASE("flatten and unflatten") {
    std::mt19937_64 rng(8);
    const EmbeddingNet net = EmbeddingNet::glorot(Layout({4, 8, 3}), rng);
    const ParamVector p = flatten(net);
    CHECK(p.size() == 67);
    CHECK(Layout({4, 8, 3}).param_count() == 4 * 8 + 8 + 8 * 3 + 3);
    CHECK(unflatten(p, net.layout()) == net);
    CHECK(flatten(EmbeddingNet(Layout({4, 8, 3}))).values == Vector(67, 0.0));
    CHECK_THROWS_AS(unflatten(p, Layout({4, 7, 3})), LayoutError);
  }

  TEST_CASE("glorot init stays within its bound and zeroes biases") {
    std::mt19937_64 rng(1);
    const EmbeddingNet net = EmbeddingNet::glorot(Layout({6, 10, 4}), rng);
    const double a0 = std::sqrt(6.0 / 16.0);
    for (double w : net.weights(0)) CHECK(std::abs(w) <= a0);
    for (double b : net.bias(0)) CHECK(b == 0.0);
    for (double b : net.bias(1)) CHECK(b == 0.0);
  }

  TEST_CASE("forward is deterministic and derive_seed is stable") {
    std::mt19937_64 a(99), b(99);
    const EmbeddingNet n1 = EmbeddingNet::glorot(Layout({5, 7, 3}), a);
    const EmbeddingNet n2 = EmbeddingNet::glorot(Layout({5, 7, 3}), b);
    CHECK(n1 == n2);
    const Vector x{1, 2, 3, 4, 5};
    CHECK(forward(n1, x) == forward(n2, x));
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  }

  TEST_CASE("composition gradients through normalization") {
    std::mt19937_64 rng(21);
    const auto r = gradcheck::check_network(rng, 20);
    CHECK(r.cases == 20);
    CHECK(r.max_rel < 1e-5);
  }
}
