#include <doctest.h>

#include "oracles.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/synth.hpp"
#include "trafficdtl/training.hpp"

using namespace trafficdtl;

namespace {

/// Windows of a smooth two-tone signal, targets in (-1, 1).
WindowedDataset toy(std::size_t T, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0, 0.02);
  Tensor s({T, 5}), t({T, 5});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t c = 0; c < 5; ++c) {
      const double v = 0.6 * std::sin(0.21 * static_cast<double>(i) + c) + 0.2 * std::cos(0.05 * static_cast<double>(i) * (c + 1));
      s.at({i, c}) = v + noise(rng);
      t.at({i, c}) = v;
    }
  return window(s, t, p, 0);
}

}  // namespace

TEST_CASE("overfits 32 samples") {
  const WindowedDataset all = toy(60, 10, 1);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  const WindowedDataset small = all.select(idx);
  ModelGraph cnn = build_cnn(10, 5, 5, {}, 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 0;
  cfg.batch_size = 32;
  cfg.optimizer.learning_rate = 3e-3;
  const TrainResult r = train(cnn, small, small, cfg);
  CHECK(evaluate(cnn, small).mse < 1e-3);
  CHECK(r.eval.mse < 1e-3);
}

TEST_CASE("all layers frozen: no change and constant loss") {
  const WindowedDataset ds = toy(80, 10, 2);
  ModelGraph g = build_cnn(10, 5, 5, {}, 1);
  g.freeze_all(true);
  const ModelGraph before = g;
  TrainConfig cfg;
  cfg.epochs = 3;
  const TrainResult r = train(g, ds, ds, cfg);
  for (std::size_t l = 0; l < g.layer_count(); ++l)
    for (std::size_t k = 0; k < g.layer(l).parameters().size(); ++k)
      CHECK(g.layer(l).parameters()[k].value == before.layer(l).parameters()[k].value);
  CHECK(r.eval.epochs_used == 0);
  CHECK(r.eval.wall_time == 0);
  CHECK(r.eval.mse == evaluate(before, ds).mse);
}

TEST_CASE("training is deterministic for a seed and restores the best epoch") {
  const WindowedDataset ds = toy(120, 10, 3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  ModelGraph a = build_rnn(10, 5, 5, {}, 2), b = build_rnn(10, 5, 5, {}, 2);
  const TrainResult ra = train(a, ds, ds, cfg);
  const TrainResult rb = train(b, ds, ds, cfg);
  CHECK(ra.eval.mse == rb.eval.mse);
  double best = ra.history.front().validation_mse;
  for (const auto& h : ra.history) best = std::min(best, h.validation_mse);
  CHECK(ra.eval.mse == doctest::Approx(best).epsilon(1e-12));
  CHECK(evaluate(a, ds).mse == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("early stopping bounds the epoch count") {
  const WindowedDataset ds = toy(80, 10, 4);
  ModelGraph g = build_cnn(10, 5, 5, {}, 4);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.patience = 1;
  cfg.optimizer.learning_rate = 0.5;  // diverges quickly, validation stops improving
  const TrainResult r = train(g, ds, ds, cfg);
  CHECK(r.eval.epochs_used < 50);
  CHECK(r.history.size() == r.eval.epochs_used + 1);
}

TEST_CASE("metrics") {
  const Tensor y({3, 2}, std::vector<double>{0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
  CHECK(mse_of(y, y).mse == 0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 0.5);
  Tensor t({20000, 1});
  for (double& v : t.data()) v = nd(rng);
  CHECK(mse_of(Tensor({20000, 1}), t).mse == doctest::Approx(0.25).epsilon(0.03));
  const EvalResult e = mse_of(Tensor({3, 2}), y);
  CHECK(e.per_output_mse.size() == 2);
  CHECK(e.per_output_mse[0] == doctest::Approx((0.01 + 0.09 + 0.25) / 3));
}

TEST_CASE("chronological split") {
  const SiteSeries eb = to_series(generate(builtin_profile("EB"), 1));
  const PreparedData d = prepare(eb, 10, 0, 6);
  const std::int64_t split_time = eb.timestamps.front() + 6 * 86400;
  CHECK(d.split_time == split_time);
  for (auto t : d.train.target_time) CHECK(t < split_time);
  for (auto t : d.validation.target_time) CHECK(t >= split_time);
  // About one day of windows on the validation side.
  CHECK(d.validation.size() > 680);
  CHECK(d.validation.size() <= 720);
  // Inputs of the earliest validation windows reach back into the training days.
  CHECK(eb.timestamps[d.validation.last_row.front()] < split_time);
  CHECK_THROWS_AS(prepare(eb, 10, 0, 7), std::invalid_argument);
}

TEST_CASE("normalization statistics come from the training rows") {
  const SiteSeries eb = to_series(generate(builtin_profile("EB"), 1));
  const PreparedData d = prepare(eb, 10, 0, 6);
  std::size_t train_rows = 0;
  while (eb.timestamps[train_rows] < d.split_time) ++train_rows;
  const NormParams ref = fit_normalization(eb.inputs, std::vector<std::string>(kInputColumns.begin(), kInputColumns.end()),
                                           train_rows);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(d.train.input_norm[c].min == ref[c].min);
    CHECK(d.train.input_norm[c].max == ref[c].max);
  }
  for (double v : d.validation.X.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("persistence predicts the last input bucket") {
  const SiteSeries eb = to_series(generate(builtin_profile("EB"), 1));
  const PreparedData d = prepare(eb, 10, 0, 6);
  const EvalResult e = persistence(d.validation, d.normalized_targets);
  Tensor pred({d.validation.size(), 5});
  for (std::size_t k = 0; k < d.validation.size(); ++k)
    for (std::size_t c = 0; c < 5; ++c) pred.at({k, c}) = d.normalized_targets.at({d.validation.last_row[k], c});
  CHECK(e.mse == mse_of(pred, d.validation.Y).mse);
  CHECK(e.mse > 0);
}

TEST_CASE("subsample keeps every n-th window") {
  const WindowedDataset ds = toy(50, 5, 1);
  const WindowedDataset s = subsample(ds, 4);
  CHECK(s.size() == (ds.size() + 3) / 4);
  CHECK(s.target_row[1] == ds.target_row[4]);
  CHECK(subsample(ds, 1).X == ds.X);
}
