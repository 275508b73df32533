#pragma once

#include <unordered_map>

#include "trafficdtl/autodiff.hpp"
#include "trafficdtl/model.hpp"

namespace trafficdtl {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// First-order optimizer over a model's unfrozen parameters. Moment state is
/// keyed by parameter address, so the model must outlive the optimizer.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  /// Applies one update. Frozen layers and parameters absent from grads are
  /// left untouched. Returns the number of parameters updated.
  std::size_t step(ModelGraph& model, const GradientMap& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  OptimizerConfig config_;
  std::unordered_map<const Parameter*, Moments> state_;
  std::size_t t_ = 0;
};

}  // namespace trafficdtl
