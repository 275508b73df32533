#include "trafficdtl/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>
#include <stdexcept>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

std::pair<WindowedDataset, WindowedDataset> split(const WindowedDataset& ds, double train_days,
                                                  std::int64_t series_start) {
  if (!(train_days > 0)) throw std::invalid_argument("split: train_days must be positive");
  const auto cut = series_start + static_cast<std::int64_t>(train_days * 86400.0);
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.target_time[i] < cut ? tr : va).push_back(i);
  if (va.empty()) {
    throw std::invalid_argument("split: " + std::to_string(train_days) +
                                " training days leave no validation windows (dataset span too short)");
  }
  if (tr.empty()) throw std::invalid_argument("split: no training windows before the split point");
  return {ds.select(tr), ds.select(va)};
}

PreparedData prepare(const SiteSeries& series, std::size_t p, std::size_t dn, double train_days) {
  if (series.timestamps.empty()) throw std::invalid_argument("prepare: empty series");
  PreparedData out;
  const std::int64_t start = series.timestamps.front();
  out.split_time = start + static_cast<std::int64_t>(train_days * 86400.0);
  const auto fit_rows = static_cast<std::size_t>(
      std::lower_bound(series.timestamps.begin(), series.timestamps.end(), out.split_time) - series.timestamps.begin());
  const NormParams in_norm = fit_normalization(series.inputs, kInputColumns, fit_rows);
  const NormParams tg_norm = fit_normalization(series.targets, kTargetColumns, fit_rows);
  const Tensor x = normalize(series.inputs, in_norm);
  out.normalized_targets = normalize(series.targets, tg_norm);
  WindowedDataset all = window(x, out.normalized_targets, series.timestamps, p, dn);
  all.input_norm = in_norm;
  all.target_norm = tg_norm;
  std::tie(out.train, out.validation) = split(all, train_days, start);
  return out;
}

EvalResult mse_of(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape() || prediction.rank() != 2) {
    throw ShapeError("mse: prediction " + shape_str(prediction.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::size_t n = target.dim(0), q = target.dim(1);
  EvalResult r;
  r.per_output_mse.assign(q, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const double d = prediction[i * q + j] - target[i * q + j];
      r.per_output_mse[j] += d * d;
    }
  for (double& v : r.per_output_mse) v /= static_cast<double>(std::max<std::size_t>(n, 1));
  r.mse = std::accumulate(r.per_output_mse.begin(), r.per_output_mse.end(), 0.0) / static_cast<double>(q);
  return r;
}

EvalResult evaluate(const ModelGraph& model, const WindowedDataset& data) {
  return mse_of(model.predict(data.X), data.Y);
}

EvalResult persistence(const WindowedDataset& data, const Tensor& normalized_targets) {
  const std::size_t q = data.Y.dim(1);
  Tensor pred({data.size(), q});
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < q; ++j) pred[i * q + j] = normalized_targets[data.last_row[i] * q + j];
  return mse_of(pred, data.Y);
}

WindowedDataset subsample(const WindowedDataset& ds, std::size_t stride) {
  if (stride <= 1) return ds;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); i += stride) idx.push_back(i);
  return ds.select(idx);
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order, std::size_t begin, std::size_t len) {
  Shape s = src.shape();
  s[0] = len;
  Tensor out(s);
  const std::size_t row = src.size() / src.dim(0);
  for (std::size_t k = 0; k < len; ++k) {
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(order[begin + k] * row), row,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * row));
  }
  return out;
}

std::vector<Tensor> snapshot(const ModelGraph& model) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < model.layer_count(); ++i)
    for (const Parameter& p : model.layer(i).parameters()) out.push_back(p.value);
  return out;
}

void restore(ModelGraph& model, const std::vector<Tensor>& values) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i)
    for (Parameter& p : model.layer(i).parameters()) p.value = values[k++];
}

}  // namespace

TrainResult train(ModelGraph& model, const WindowedDataset& train, const WindowedDataset& validation,
                  const TrainConfig& config) {
  if (train.size() == 0 || validation.size() == 0) throw std::invalid_argument("train: empty train or validation set");
  if (train.X.dim(1) != model.window() || train.X.dim(2) != model.features() || train.Y.dim(1) != model.outputs()) {
    throw ShapeError("train: data " + shape_str(train.X.shape()) + " -> " + shape_str(train.Y.shape()) +
                     " does not fit the model's [" + std::to_string(model.window()) + "," +
                     std::to_string(model.features()) + "] -> " + std::to_string(model.outputs()));
  }
  if (config.batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  TrainResult result;
  const std::size_t n_layers = model.layer_count();
  const bool trainable = model.trainable_param_count() > 0 && config.epochs > 0;

  // Frozen deterministic leading layers are evaluated once.
  const std::size_t prefix = trainable ? model.frozen_prefix() : 0;
  const Tensor train_in = prefix ? model.run(train.X, 0, prefix) : train.X;
  const Tensor val_in = prefix ? model.run(validation.X, 0, prefix) : validation.X;
  auto validate = [&] {
    const Tensor pred = prefix ? model.run(val_in, prefix, n_layers) : model.predict(validation.X);
    return mse_of(pred, validation.Y);
  };

  EvalResult best = validate();
  result.history.push_back({0, 0.0, best.mse});
  if (!trainable) {
    best.seed = config.seed;
    result.eval = best;
    return result;
  }
  std::vector<Tensor> best_weights = snapshot(model);

  Optimizer opt(config.optimizer);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      Tape tape;
      ForwardContext ctx{true, &rng};
      Var x = tape.constant(gather_rows(train_in, order, start, len));
      if (prefix == 0) x = model.adapt_input(tape, x);
      const Var y = model.forward_range(tape, x, prefix, n_layers, ctx);
      const Var loss = mse_loss(y, tape.constant(gather_rows(train.Y, order, start, len)));
      loss_sum += loss.value().item() * static_cast<double>(len);
      if (tape.requires_grad(loss)) opt.step(model, tape.backward(loss));
    }
    const EvalResult ev = validate();
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), ev.mse});
    result.eval.epochs_used = epoch;
    if (ev.mse < best.mse) {
      best = ev;
      result.best_epoch = epoch;
      best_weights = snapshot(model);
      since_best = 0;
    } else if (config.patience && ++since_best >= config.patience) {
      break;
    }
  }
  result.optimizer_steps = opt.steps_taken();
  const std::size_t used = result.eval.epochs_used;
  if (config.restore_best) {
    restore(model, best_weights);
    result.eval = best;
  } else {
    result.eval = validate();
  }
  result.eval.epochs_used = used;
  result.eval.seed = config.seed;
  result.eval.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
  return result;
}

}  // namespace trafficdtl
