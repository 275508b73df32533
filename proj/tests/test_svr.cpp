#include <doctest.h>

#include "oracles.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/svr.hpp"

using namespace trafficdtl;

namespace {

struct Problem {
  Tensor X;
  std::vector<double> y;
};

Problem random_problem(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  Problem pr{oracle::random_tensor({n, d}, rng), {}};
  std::normal_distribution<double> noise(0, 0.1);
  for (std::size_t i = 0; i < n; ++i) pr.y.push_back(std::sin(2 * pr.X[i * d]) + 0.5 * pr.X[i * d + d - 1] + noise(rng));
  return pr;
}

}  // namespace

TEST_CASE("dual objective matches the brute-force QP on random problems") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Problem pr = random_problem(20, 3, rng);
    SvrParams p;
    p.C = std::uniform_real_distribution<double>(0.2, 5)(rng);
    p.epsilon = std::uniform_real_distribution<double>(0.01, 0.2)(rng);
    p.gamma = std::uniform_real_distribution<double>(0.3, 2)(rng);
    p.tol = 1e-9;
    SvrFitInfo info;
    svr_fit(pr.X, pr.y, p, &info);
    const double ref = oracle::svr_dual_bruteforce(pr.X, pr.y, p.C, p.epsilon, p.gamma);
    CAPTURE(trial);
    CHECK(std::abs(info.objective - ref) <= 1e-5 * std::abs(ref));
    CHECK(info.objective <= ref + 1e-12 * std::abs(ref) + 1e-12);
  }
}

TEST_CASE("KKT gap, feasibility and monotone objective") {
  std::mt19937_64 rng(32);
  const Problem pr = random_problem(40, 4, rng);
  SvrParams p;
  p.C = 2;
  p.epsilon = 0.05;
  p.tol = 1e-4;
  p.trace = true;
  SvrFitInfo info;
  SvrDual dual;
  const SvrModel m = svr_fit_dual(pr.X, pr.y, p, dual, &info);
  CHECK(info.kkt_violation <= p.tol);
  REQUIRE(info.objective_trace.size() == info.iterations);
  for (std::size_t i = 1; i < info.objective_trace.size(); ++i)
    CHECK(info.objective_trace[i] <= info.objective_trace[i - 1] + 1e-12);
  for (double v : info.equality_trace) CHECK(std::abs(v) < 1e-10);
  for (double v : info.box_violation_trace) CHECK(v == 0.0);
  for (double a : dual.alpha) {
    CHECK(a >= 0);
    CHECK(a <= p.C);
  }
  double balance = 0;
  for (std::size_t i = 0; i < 40; ++i) balance += dual.alpha[i] - dual.alpha[40 + i];
  CHECK(std::abs(balance) < 1e-10);
  CHECK(m.bias == doctest::Approx(-dual.rho));
  for (double c : m.coef) CHECK(std::abs(c) <= p.C + 1e-12);
}

TEST_CASE("single point with zero epsilon is interpolated") {
  SvrParams p;
  p.epsilon = 0;
  const Tensor X({1, 2}, std::vector<double>{0.3, -0.4});
  const std::vector<double> y{1.7};
  const SvrModel m = svr_fit(X, y, p);
  CHECK(m.predict(std::vector<double>{0.3, -0.4}) == doctest::Approx(1.7));
}

TEST_CASE("targets inside one tube give no support vectors") {
  std::mt19937_64 rng(33);
  const Tensor X = oracle::random_tensor({15, 2}, rng);
  std::vector<double> y(15);
  std::uniform_real_distribution<double> u(0.95, 1.05);
  for (double& v : y) v = u(rng);
  SvrParams p;
  p.epsilon = 0.2;
  const SvrModel m = svr_fit(X, y, p);
  CHECK(m.support_count() == 0);
  CHECK(m.bias >= 1.05 - 0.2);
  CHECK(m.bias <= 0.95 + 0.2);
  CHECK(m.predict(std::vector<double>{0, 0}) == m.bias);
}

TEST_CASE("prediction formula") {
  SvrModel m;
  m.gamma = 1e6;
  m.bias = 0.25;
  m.support_vectors = Tensor({1, 2}, std::vector<double>{1, 2});
  m.coef = {0.75};
  CHECK(m.predict(std::vector<double>{1, 2}) == doctest::Approx(1.0));
  CHECK(m.predict(std::vector<double>{1.5, 2}) == doctest::Approx(0.25));
  m.support_vectors = Tensor({2, 2}, std::vector<double>{1, 2, 1, 2});
  m.coef = {0.75, -0.75};
  m.gamma = 0.5;
  CHECK(m.predict(std::vector<double>{0.1, 0.7}) == doctest::Approx(0.25));
}

TEST_CASE("deterministic for a seed") {
  std::mt19937_64 rng(34);
  const Problem pr = random_problem(30, 3, rng);
  SvrParams p;
  p.seed = 4;
  const SvrModel a = svr_fit(pr.X, pr.y, p), b = svr_fit(pr.X, pr.y, p);
  CHECK(a.coef == b.coef);
  CHECK(a.bias == b.bias);
}

TEST_CASE("iteration cap raises ConvergenceError") {
  std::mt19937_64 rng(35);
  const Problem pr = random_problem(30, 3, rng);
  SvrParams p;
  p.max_iterations = 2;
  p.tol = 1e-12;
  CHECK_THROWS_AS(svr_fit(pr.X, pr.y, p), ConvergenceError);
}

TEST_CASE("grid search") {
  std::mt19937_64 rng(36);
  const Problem tr = random_problem(40, 2, rng), va = random_problem(20, 2, rng);
  Tensor Ytr({40, 1}, tr.y), Yva({20, 1}, va.y);
  SUBCASE("singleton grid returns its triple") {
    const auto g = svr_grid_search(tr.X, Ytr, va.X, Yva, {3}, {0.07}, {0.9});
    CHECK(g.best.C == 3);
    CHECK(g.best.epsilon == 0.07);
    CHECK(g.best.gamma == 0.9);
    CHECK(g.points.size() == 1);
  }
  SUBCASE("planted optimum is selected") {
    // Validation targets produced by a fixed model are fit best by that model's triple.
    SvrParams planted;
    planted.C = 1;
    planted.epsilon = 0.05;
    planted.gamma = 0.7;
    const SvrModel teacher = svr_fit(tr.X, tr.y, planted);
    Tensor Yplant({20, 1}, teacher.predict(va.X));
    const auto g = svr_grid_search(tr.X, Ytr, va.X, Yplant, {0.01, 1, 100}, {0.05, 0.5}, {0.7, 20});
    CHECK(g.best.C == 1);
    CHECK(g.best.epsilon == 0.05);
    CHECK(g.best.gamma == 0.7);
    CHECK(g.best.mse < 1e-12);
  }
  SUBCASE("enumeration order does not change the result") {
    const auto a = svr_grid_search(tr.X, Ytr, va.X, Yva, {0.1, 1, 10}, {0.01, 0.1}, {});
    const auto b = svr_grid_search(tr.X, Ytr, va.X, Yva, {10, 0.1, 1}, {0.1, 0.01}, {});
    CHECK(a.best.C == b.best.C);
    CHECK(a.best.epsilon == b.best.epsilon);
    CHECK(a.best.mse == b.best.mse);
  }
  SUBCASE("ties prefer smaller C then larger epsilon") {
    // Huge epsilon: every triple predicts the same constant.
    const auto g = svr_grid_search(tr.X, Ytr, va.X, Yva, {5, 0.5}, {50, 60}, {1});
    CHECK(g.best.C == 0.5);
    CHECK(g.best.epsilon == 60);
  }
  SUBCASE("multi-output shares hyperparameters") {
    Tensor Y2({40, 2});
    for (std::size_t i = 0; i < 40; ++i) {
      Y2.at({i, 0}) = tr.y[i];
      Y2.at({i, 1}) = -tr.y[i];
    }
    SvrParams tight;
    tight.tol = 1e-10;
    const MultiSvr m = svr_fit_multi(tr.X, Y2, tight);
    const Tensor pred = m.predict(va.X);
    CHECK(pred.shape() == Shape{20, 2});
    for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(pred.at({i, 0}) + pred.at({i, 1})) < 1e-7);
  }
}

TEST_CASE("flatten windows and default gamma") {
  const Tensor X({2, 3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  const Tensor f = flatten_windows(X);
  CHECK(f.shape() == Shape{2, 6});
  CHECK(f[7] == 8);
  const Tensor v({2, 2}, std::vector<double>{0, 2, 0, 2});  // var 1
  CHECK(default_gamma(v) == doctest::Approx(0.5));
}
