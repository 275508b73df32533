#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "trafficdtl/autodiff.hpp"
#include "trafficdtl/error.hpp"

using namespace trafficdtl;

TEST_CASE("elementwise values") {
  Tape t;
  CHECK(trafficdtl::tanh(t.constant(Tensor::scalar(0))).value().item() == 0.0);
  CHECK(sigmoid(t.constant(Tensor::scalar(0))).value().item() == 0.5);
  const Var l = leaky_relu(t.constant(Tensor({2}, std::vector<double>{-2, 3})), 0.1);
  CHECK(l.value()[0] == doctest::Approx(-0.2));
  CHECK(l.value()[1] == 3.0);
}

TEST_CASE("identity matmul returns the operand") {
  std::mt19937_64 rng(3);
  for (std::size_t k = 1; k <= 4; ++k) {
    Tape t;
    const Tensor A = oracle::random_tensor({3, k}, rng);
    CHECK(matmul(t.constant(Tensor::identity(3)), t.constant(A)).value() == A);
  }
}

TEST_CASE("gradient of a linear map is the broadcast input") {
  Tape t;
  const Tensor x({3, 1}, std::vector<double>{1, 2, 3});
  const Var W = t.variable(Tensor({2, 3}, std::vector<double>{1, -1, 2, 0, 4, 5}));
  t.backward(sum(matmul(W, t.constant(x))));
  const Tensor g = t.grad(W);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.at({r, c}) == x[c]);
}

TEST_CASE("mse gradient is 2(y-t)/n") {
  Tape t;
  const Tensor y({2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor target({2, 2}, std::vector<double>{0, 2, 5, 1});
  const Var yv = t.variable(y);
  t.backward(mse_loss(yv, t.constant(target)));
  const Tensor g = t.grad(yv);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(2 * (y[i] - target[i]) / 4));
}

TEST_CASE("random two-layer tanh net agrees with finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    oracle::GradGraph g;
    g.leaves = {oracle::random_tensor({4, 3}, rng), oracle::random_tensor({3, 5}, rng), oracle::random_tensor({5}, rng),
                oracle::random_tensor({5, 2}, rng), oracle::random_tensor({4, 2}, rng)};
    g.build = [](Tape&, const std::vector<Var>& v) {
      const Var h = trafficdtl::tanh(add(matmul(v[0], v[1]), v[2]));
      return mse_loss(trafficdtl::tanh(matmul(h, v[3])), v[4]);
    };
    CHECK(oracle::gradient_error(g) < 1e-6);
  }
}

TEST_CASE("every op passes the finite-difference check on random graphs") {
  const auto graphs = oracle::random_graphs(126, 2024);
  std::map<std::string, std::size_t> seen;
  for (const auto& g : graphs) {
    CAPTURE(g.label);
    CHECK(oracle::gradient_error(g) < 1e-4);
    ++seen[g.label];
  }
  CHECK(seen.size() == 21);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(5);
  for (auto [kh, kw] : std::vector<std::pair<std::size_t, std::size_t>>{{3, 3}, {16, 3}, {4, 2}, {1, 1}}) {
    const Tensor x = oracle::random_tensor({5, 5, 2}, rng);
    const Tensor f = oracle::random_tensor({3, kh, kw, 2}, rng);
    const Tensor b = oracle::random_tensor({3}, rng);
    Tape t(false);
    const Tensor y = conv2d_same(t.constant(x), t.constant(f), t.constant(b)).value();
    const Tensor ref = oracle::naive_conv(x, f, b);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("conv2d degenerate cases") {
  Tape t(false);
  const Var one = conv2d_same(t.constant(Tensor({1, 1, 1}, 3.0)), t.constant(Tensor({1, 1, 1, 1}, 2.0)),
                              t.constant(Tensor({1}, 0.5)));
  CHECK(one.value().item() == 6.5);
  std::mt19937_64 rng(1);
  const Var flat = conv2d_same(t.constant(oracle::random_tensor({4, 3, 1}, rng)), t.constant(Tensor({2, 3, 3, 1})),
                               t.constant(Tensor({2}, std::vector<double>{1.5, -2})));
  for (std::size_t i = 0; i < flat.value().size(); ++i) CHECK(flat.value()[i] == (i % 2 == 0 ? 1.5 : -2.0));
}

TEST_CASE("average pooling floors odd heights and keeps constants") {
  Tape t(false);
  CHECK(avgpool2d(t.constant(Tensor({1, 10, 5, 3}, 1.0)), 2, 1).shape() == Shape{1, 5, 5, 3});
  const Var odd = avgpool2d(t.constant(Tensor({1, 15, 5, 3}, 4.25)), 2, 1);
  CHECK(odd.shape() == Shape{1, 7, 5, 3});
  for (double v : odd.value().data()) CHECK(v == 4.25);
}

TEST_CASE("shape errors name the operation") {
  Tape t;
  CHECK_THROWS_AS(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), ShapeError);
  CHECK_THROWS_AS(add(t.constant(Tensor({2, 3})), t.constant(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(slice(t.constant(Tensor({2, 3})), 1, 2, 2), ShapeError);
}

TEST_CASE("non-finite values raise NumericalError") {
  Tape t;
  const Var x = t.variable(Tensor({1}, 1e300));
  CHECK_THROWS_AS(scale(x, 1e300), NumericalError);
}
