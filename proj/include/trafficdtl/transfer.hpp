#pragma once

#include <string>
#include <vector>

#include "trafficdtl/model.hpp"
#include "trafficdtl/training.hpp"

namespace trafficdtl {

/// Per-layer freeze flags for transfer. Only the last three parameterized
/// layers may be retrained; everything before them stays frozen.
struct FreezeMask {
  std::vector<bool> frozen;  // aligned with ModelGraph layers
  std::string label;         // one char per tunable layer, in order: 'T' retrain, 'F' frozen

  /// bits: bit k set retrains the k-th of the last three parameterized layers
  /// (k = 0 is the earliest of the three).
  static FreezeMask from_bits(const ModelGraph& model, unsigned bits);
  static FreezeMask from_label(const ModelGraph& model, const std::string& label);

  bool all_frozen() const;
  void apply(ModelGraph& model) const;
  std::size_t trainable_param_count(const ModelGraph& model) const;
};

/// The 8 masks in bit order; the first one freezes everything.
std::vector<FreezeMask> all_masks(const ModelGraph& model);

/// Indices of the layers a mask may retrain.
std::vector<std::size_t> tunable_layers(const ModelGraph& model);

struct TransferResult {
  ModelGraph student;
  TrainResult train;
};

/// Copies the teacher, applies the mask and retrains the unfrozen layers on the
/// student's data, starting from the teacher's weights. The all-frozen mask
/// runs no epochs. When `student_architecture` is given it must match the teacher.
TransferResult transfer(const ModelGraph& teacher, const WindowedDataset& train, const WindowedDataset& validation,
                        const FreezeMask& mask, const TrainConfig& config,
                        const ModelGraph* student_architecture = nullptr);

struct SweepMember {
  FreezeMask mask;
  std::size_t trainable_params = 0;
  std::vector<EvalResult> runs;  // one per seed
  double mean_mse() const;
  double mean_wall_time() const;
  double mean_epochs() const;
};

struct SweepResult {
  std::vector<SweepMember> members;
  std::size_t best = 0;  // index of the lowest mean MSE
  const SweepMember& best_member() const { return members.at(best); }
};

/// All 8 masks x seeds. config.seed is replaced by each entry of `seeds`.
/// Members run in parallel when jobs > 1.
SweepResult sweep(const ModelGraph& teacher, const WindowedDataset& train, const WindowedDataset& validation,
                  const TrainConfig& config, const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

}  // namespace trafficdtl
