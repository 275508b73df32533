#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/layers.hpp"
#include "trafficdtl/model.hpp"
#include "trafficdtl/optim.hpp"

using namespace trafficdtl;

namespace {

double sig(double v) { return 1 / (1 + std::exp(-v)); }

}  // namespace

TEST_CASE("closed-form parameter counts") {
  GruLayer gru("g", 5, 128);
  CHECK(param_count(gru) == 51456);
  CHECK(gru.expected_param_count() == 51456);
  Conv2DLayer conv("c", 1, 16, 16, 3);
  CHECK(param_count(conv) == 784);
  DenseLayer dense("d", 800, 5);
  CHECK(param_count(dense) == 4005);
  CHECK(param_count(DropoutLayer("x", 0.2)) == 0);
  CHECK(param_count(AvgPool2DLayer("p", 2, 1)) == 0);
  CHECK(param_count(FlattenLayer("f")) == 0);
}

TEST_CASE("GRU with zero input and zero parameters stays at zero") {
  GruLayer gru("g", 3, 4);
  const Tensor h = gru_forward(Tensor({6, 3}), gru);
  CHECK(h.shape() == Shape{6, 4});
  for (double v : h.data()) CHECK(v == 0.0);
}

TEST_CASE("GRU single step matches a scalar hand computation") {
  GruLayer gru("g", 1, 1);
  const double wz = 0.3, wr = -0.7, wh = 1.1, uz = 0.5, ur = 0.2, uh = -0.4, bz = 0.1, br = -0.2, bh = 0.05;
  gru.parameter("W_z").value = Tensor({1, 1}, wz);
  gru.parameter("W_r").value = Tensor({1, 1}, wr);
  gru.parameter("W_h").value = Tensor({1, 1}, wh);
  gru.parameter("U_z").value = Tensor({1, 1}, uz);
  gru.parameter("U_r").value = Tensor({1, 1}, ur);
  gru.parameter("U_h").value = Tensor({1, 1}, uh);
  gru.parameter("b_z").value = Tensor({1}, bz);
  gru.parameter("b_r").value = Tensor({1}, br);
  gru.parameter("b_h").value = Tensor({1}, bh);
  const double x0 = 0.8, x1 = -0.6;
  // Step 1 from h = 0, then step 2 from the result.
  double h = 0;
  for (double x : {x0, x1}) {
    const double z = sig(wz * x + uz * h + bz);
    const double r = sig(wr * x + ur * h + br);
    const double cand = std::tanh(wh * x + uh * (r * h) + bh);
    h = (1 - z) * h + z * cand;
    if (x == x0) CHECK(gru_forward(Tensor({1, 1}, x0), gru).item() == doctest::Approx(h).epsilon(1e-14));
  }
  const Tensor seq = gru_forward(Tensor({2, 1}, std::vector<double>{x0, x1}), gru);
  CHECK(seq[1] == doctest::Approx(h).epsilon(1e-14));
}

TEST_CASE("layer parameter gradients agree with finite differences") {
  std::mt19937_64 rng(21);
  SUBCASE("gru") {
    auto layer = std::make_unique<GruLayer>("g", 3, 4);
    layer->initialize(rng);
    ModelGraph g(Arch::rnn, 4, 3, 16, nlohmann::json::object());
    g.add_layer(std::move(layer));
    g.add_layer(std::make_unique<FlattenLayer>("f"));
    for (std::size_t l = 0; l < 1; ++l)
      for (auto& p : g.layer(l).parameters()) p.value = oracle::random_tensor(p.value.shape(), rng, -0.5, 0.5);
    CHECK(oracle::model_gradient_error(g, oracle::random_tensor({2, 4, 3}, rng), oracle::random_tensor({2, 16}, rng)) <
          1e-5);
  }
  SUBCASE("dense tanh") {
    auto layer = std::make_unique<DenseLayer>("d", 6, 3, Activation::tanh);
    layer->initialize(rng);
    layer->parameter("bias").value = oracle::random_tensor({3}, rng);
    ModelGraph wrapped(Arch::rnn, 2, 3, 3, nlohmann::json::object());
    wrapped.add_layer(std::make_unique<FlattenLayer>("f"));
    wrapped.add_layer(std::move(layer));
    CHECK(oracle::model_gradient_error(wrapped, oracle::random_tensor({5, 2, 3}, rng), oracle::random_tensor({5, 3}, rng)) <
          1e-5);
  }
}

TEST_CASE("dense layer arithmetic") {
  DenseLayer d("d", 2, 1);
  d.parameter("kernel").value = Tensor(d.parameter("kernel").value.shape(), std::vector<double>{2, -3});
  d.parameter("bias").value = Tensor({1}, 0.5);
  Tape t(false);
  const Var y = d.forward(t, t.constant(Tensor({1, 2}, std::vector<double>{1, 1})), {});
  CHECK(y.value().item() == doctest::Approx(-0.5));
}

TEST_CASE("dropout is identity at inference and inverted-scaled in training") {
  DropoutLayer drop("d", 0.5);
  Tape t(false);
  std::mt19937_64 rng(1);
  const Tensor x({4, 100}, 1.0);
  CHECK(drop.forward(t, t.constant(x), {}).value() == x);
  const Tensor y = drop.forward(t, t.constant(x), {true, &rng}).value();
  std::size_t zeros = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    zeros += v == 0.0;
  }
  CHECK(zeros > 100);
  CHECK(zeros < 300);
}

TEST_CASE("freeze semantics") {
  std::mt19937_64 rng(4);
  ModelGraph g = build_cnn(10, 5, 5, {}, 9);
  const Tensor x = oracle::random_tensor({8, 10, 5}, rng);
  const Tensor y = oracle::random_tensor({8, 5}, rng, -0.5, 0.5);
  g.layer(0).set_frozen(true);
  g.layer(2).set_frozen(true);
  const ModelGraph before = g;
  Optimizer opt;
  for (int step = 0; step < 10; ++step) {
    Tape t;
    opt.step(g, t.backward(mse_loss(g.forward(t, t.constant(x), {}), t.constant(y))));
  }
  for (std::size_t l = 0; l < g.layer_count(); ++l) {
    for (std::size_t k = 0; k < g.layer(l).parameters().size(); ++k) {
      const bool same = g.layer(l).parameters()[k].value == before.layer(l).parameters()[k].value;
      CAPTURE(l);
      CHECK(same == g.layer(l).frozen());
    }
  }
  SUBCASE("unfreezing lets gradients flow again") {
    g.layer(0).set_frozen(false);
    Tape t;
    opt.step(g, t.backward(mse_loss(g.forward(t, t.constant(x), {}), t.constant(y))));
    CHECK_FALSE(g.layer(0).parameters()[0].value == before.layer(0).parameters()[0].value);
  }
  SUBCASE("freezing everything leaves nothing to train") {
    g.freeze_all(true);
    CHECK(g.trainable_param_count() == 0);
  }
}

TEST_CASE("frozen prefix stops at the first trainable or stochastic layer") {
  ModelGraph cnn = build_cnn(10);
  CHECK(cnn.frozen_prefix() == 0);
  cnn.layer(0).set_frozen(true);
  cnn.layer(1).set_frozen(true);
  CHECK(cnn.frozen_prefix() == 2);
  cnn.freeze_all(true);
  CHECK(cnn.frozen_prefix() == cnn.layer_count());
  ModelGraph rnn = build_rnn(10);
  rnn.freeze_all(true);
  CHECK(rnn.frozen_prefix() == 3);  // gru_4 carries dropout
}

TEST_CASE("layer input validation") {
  Tape t;
  GruLayer gru("g", 3, 2);
  CHECK_THROWS_AS(gru.forward(t, t.constant(Tensor({1, 4, 5})), {}), ShapeError);
  CHECK_THROWS_AS(DropoutLayer("d", 1.0), std::invalid_argument);
}
