#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/transfer.hpp"

using namespace trafficdtl;

namespace {

WindowedDataset toy(std::size_t T, std::size_t p, double phase) {
  Tensor s({T, 5}), t({T, 5});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t c = 0; c < 5; ++c) {
      const double v = 0.7 * std::sin(0.3 * static_cast<double>(i) + phase + 0.4 * static_cast<double>(c));
      s.at({i, c}) = v;
      t.at({i, c}) = v;
    }
  return window(s, t, p, 0);
}

bool same_params(const Layer& a, const Layer& b) {
  for (std::size_t k = 0; k < a.parameters().size(); ++k)
    if (!(a.parameters()[k].value == b.parameters()[k].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("eight distinct masks over the last three parameterized layers") {
  for (const ModelGraph& g : {build_rnn(10), build_cnn(10)}) {
    const auto masks = all_masks(g);
    CHECK(masks.size() == 8);
    std::set<std::string> labels;
    for (const auto& m : masks) labels.insert(m.label);
    CHECK(labels.size() == 8);
    CHECK(masks.front().all_frozen());
    CHECK(masks.front().label == "FFF");
    const auto tun = tunable_layers(g);
    REQUIRE(tun.size() == 3);
    const auto params = g.parameterized_layers();
    CHECK(tun.back() == params.back());
    for (const auto& m : masks)
      for (std::size_t i = 0; i < g.layer_count(); ++i)
        if (g.layer(i).has_parameters() && std::find(tun.begin(), tun.end(), i) == tun.end()) CHECK(m.frozen[i]);
  }
}

TEST_CASE("trainable counts are exact sums over unfrozen layers") {
  const ModelGraph cnn = build_cnn(10);
  CHECK(FreezeMask::from_label(cnn, "FFT").trainable_param_count(cnn) == 4005);
  for (const ModelGraph& g : {build_rnn(10), build_cnn(20)}) {
    for (const auto& m : all_masks(g)) {
      std::size_t expect = 0;
      for (std::size_t i = 0; i < g.layer_count(); ++i)
        if (!m.frozen[i]) expect += param_count(g.layer(i));
      CHECK(m.trainable_param_count(g) == expect);
      ModelGraph copy = g;
      m.apply(copy);
      CHECK(copy.trainable_param_count() == expect);
    }
  }
  CHECK_THROWS(FreezeMask::from_label(cnn, "FT"));
  CHECK_THROWS(FreezeMask::from_label(cnn, "FXT"));
}

TEST_CASE("transfer retrains only unfrozen layers") {
  const WindowedDataset src = toy(120, 10, 0.0), dst = toy(80, 10, 0.9);
  ModelGraph teacher = build_cnn(10, 5, 5, {}, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  train(teacher, src, src, cfg);
  for (const FreezeMask& m : all_masks(teacher)) {
    CAPTURE(m.label);
    const TransferResult r = transfer(teacher, dst, dst, m, cfg);
    for (std::size_t i = 0; i < teacher.layer_count(); ++i) {
      if (!teacher.layer(i).has_parameters()) continue;
      if (m.frozen[i]) CHECK(same_params(r.student.layer(i), teacher.layer(i)));
    }
    if (m.all_frozen()) {
      CHECK(r.train.eval.epochs_used == 0);
      CHECK(r.train.eval.wall_time == 0);
      CHECK(r.train.eval.mse == evaluate(teacher, dst).mse);
    }
  }
  // Teacher untouched by the sweep.
  ModelGraph fresh = build_cnn(10, 5, 5, {}, 2);
  CHECK_FALSE(same_params(fresh.layer(0), teacher.layer(0)));
}

TEST_CASE("sweep covers masks x seeds and its best member is minimal") {
  const WindowedDataset src = toy(100, 10, 0.0), dst = toy(60, 10, 1.3);
  ModelGraph teacher = build_cnn(10, 5, 5, {}, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  train(teacher, src, src, cfg);
  const SweepResult s = sweep(teacher, dst, dst, cfg, {1, 2, 3});
  CHECK(s.members.size() == 8);
  for (const auto& m : s.members) CHECK(m.runs.size() == 3);
  for (const auto& m : s.members) CHECK(s.best_member().mean_mse() <= m.mean_mse());
  CHECK(s.best_member().mean_mse() <= s.members.front().mean_mse());
  const SweepResult parallel = sweep(teacher, dst, dst, cfg, {1, 2, 3}, 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(parallel.members[i].mean_mse() == s.members[i].mean_mse());
}

TEST_CASE("mismatched student architecture is rejected") {
  const WindowedDataset dst = toy(60, 10, 0.0);
  const ModelGraph teacher = build_cnn(10);
  const ModelGraph other = build_cnn(15);
  CHECK_THROWS_AS(transfer(teacher, dst, dst, all_masks(teacher)[1], {}, &other), ShapeError);
}
