#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <vector>

#include "trafficdtl/layers.hpp"

namespace trafficdtl {

enum class Arch { rnn, cnn };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& name);

/// Stacked-GRU hyperparameters; defaults are the tuned values.
struct RnnHyper {
  std::array<std::size_t, 4> units{128, 64, 32, 16};
  double dropout_first = 0.0;
  double dropout_last = 0.2;
};

/// Four-conv CNN hyperparameters; defaults are the tuned values.
struct CnnHyper {
  std::size_t filters_early = 16;
  std::size_t filters_late = 32;
  std::array<std::array<std::size_t, 2>, 4> kernels{{{16, 3}, {3, 5}, {8, 3}, {4, 3}}};
  std::array<std::size_t, 2> pool{2, 1};
  double negative_slope = 0.01;
  /// Model-input column order drawn from the canonical feature order
  /// [rnti_count, rb_down, rb_up, mcs_down, mcs_up].
  std::vector<std::size_t> column_order{1, 2, 0, 3, 4};
};

nlohmann::json to_json(const RnnHyper& h);
nlohmann::json to_json(const CnnHyper& h);
RnnHyper rnn_hyper_from_json(const nlohmann::json& j);
CnnHyper cnn_hyper_from_json(const nlohmann::json& j);

/// Ordered layer stack mapping [B, p, m] windows to [B, q] tanh outputs.
class ModelGraph {
 public:
  ModelGraph(Arch arch, std::size_t p, std::size_t m, std::size_t q, nlohmann::json hyper);
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  Arch arch() const noexcept { return arch_; }
  std::size_t window() const noexcept { return p_; }
  std::size_t features() const noexcept { return m_; }
  std::size_t outputs() const noexcept { return q_; }
  const nlohmann::json& hyper() const noexcept { return hyper_; }

  void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  /// Indices of layers that own parameters, in forward order.
  std::vector<std::size_t> parameterized_layers() const;

  /// Maps canonical [B,p,m] input to the first layer's expected layout.
  Var adapt_input(Tape& tape, Var x) const;
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const;
  /// Applies layers [begin, end) to an already adapted activation.
  Var forward_range(Tape& tape, Var h, std::size_t begin, std::size_t end, const ForwardContext& ctx) const;
  /// Eval-mode activations after layers [begin, end) for batched input [N,...].
  /// With begin == 0 the input is canonical [N,p,m] windows.
  Tensor run(const Tensor& input, std::size_t begin, std::size_t end, std::size_t batch = 512) const;
  /// Leading layers that are frozen and deterministic in training mode; their
  /// output can be computed once and reused across epochs.
  std::size_t frozen_prefix() const;
  /// Inference over [N,p,m] windows in chunks; returns [N,q].
  Tensor predict(const Tensor& windows, std::size_t batch = 512) const;

  std::size_t param_count() const;
  std::size_t trainable_param_count() const;
  void freeze_all(bool flag);
  void initialize(std::uint64_t seed);

  /// Per-layer kind, hyper and parameter count.
  nlohmann::json summary() const;

 private:
  Arch arch_;
  std::size_t p_, m_, q_;
  nlohmann::json hyper_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// GRU(128)+dropout -> GRU(64) -> GRU(32) -> GRU(16)+dropout -> Flatten -> Dense(q, tanh).
ModelGraph build_rnn(std::size_t p, std::size_t m = 5, std::size_t q = 5, const RnnHyper& hyper = {},
                     std::uint64_t seed = 0);

/// Four same-padded conv layers with LeakyReLU -> AvgPool -> Flatten -> Dense(q, tanh),
/// input viewed as a single-channel p x m image.
ModelGraph build_cnn(std::size_t p, std::size_t m = 5, std::size_t q = 5, const CnnHyper& hyper = {},
                     std::uint64_t seed = 0);

/// Rebuilds an architecture from the record produced by ModelGraph::summary().
ModelGraph build_from_summary(const nlohmann::json& summary, std::uint64_t seed = 0);

/// Throws ShapeError listing layers that differ in kind, hyper or parameter shape.
void require_same_architecture(const ModelGraph& a, const ModelGraph& b);

}  // namespace trafficdtl
