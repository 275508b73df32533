#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "trafficdtl/dataset.hpp"
#include "trafficdtl/model.hpp"
#include "trafficdtl/optim.hpp"

namespace trafficdtl {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::size_t patience = 5;  // epochs without validation improvement; 0 disables
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  bool restore_best = true;

  /// 128 for the recurrent model, 256 for the convolutional one.
  static std::size_t default_batch(Arch arch) { return arch == Arch::rnn ? 128 : 256; }
};

struct EvalResult {
  double mse = 0;
  std::vector<double> per_output_mse;
  std::size_t epochs_used = 0;
  double wall_time = 0;  // seconds spent training
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the state before any update
  double train_loss = 0;
  double validation_mse = 0;
};

struct TrainResult {
  EvalResult eval;  // of the retained weights
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t optimizer_steps = 0;
};

/// Chronological split of windows: a window trains iff its target bucket lies
/// before series_start + train_days days. Throws when either side is empty.
std::pair<WindowedDataset, WindowedDataset> split(const WindowedDataset& ds, double train_days,
                                                  std::int64_t series_start);

/// Everything needed to train and score on one site for one (p, dn) cell.
struct PreparedData {
  WindowedDataset train, validation;
  Tensor normalized_targets;  // [T, q], for the persistence baseline
  std::int64_t split_time = 0;
};

/// Normalizes with statistics of the rows before the split, windows without
/// crossing removed buckets, then splits.
PreparedData prepare(const SiteSeries& series, std::size_t p, std::size_t dn, double train_days);

/// Trains the unfrozen parameters with mini-batch MSE. Keeps the weights of
/// the best validation epoch (epoch 0 included) and stops after `patience`
/// epochs without improvement. A NaN anywhere raises NumericalError.
TrainResult train(ModelGraph& model, const WindowedDataset& train, const WindowedDataset& validation,
                  const TrainConfig& config);

/// Eval-mode MSE on the normalized scale, overall and per output column.
EvalResult evaluate(const ModelGraph& model, const WindowedDataset& data);
EvalResult mse_of(const Tensor& prediction, const Tensor& target);

/// Predicts each window's target as the target row of its last input bucket.
EvalResult persistence(const WindowedDataset& data, const Tensor& normalized_targets);

/// Every `stride`-th window, keeping order. stride 1 is the identity.
WindowedDataset subsample(const WindowedDataset& ds, std::size_t stride);

}  // namespace trafficdtl
