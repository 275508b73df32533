#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "trafficdtl/autodiff.hpp"

namespace trafficdtl {

enum class LayerKind { gru, conv2d, dense, dropout, avgpool2d, flatten };

const char* layer_kind_name(LayerKind kind);

/// Per-call forward settings. Dropout draws its masks from rng when training.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

/// A trainable (or parameterless) layer acting on batched tensors whose first
/// axis is the batch.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Var forward(Tape& tape, Var x, const ForwardContext& ctx) const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Per-sample output shape (batch axis excluded).
  virtual Shape output_shape(const Shape& input) const = 0;
  /// Kind-specific settings (units, filters, kernel, rates, activation).
  virtual nlohmann::json hyper() const = 0;
  /// Closed-form parameter count for this layer's configuration.
  virtual std::size_t expected_param_count() const = 0;
  /// Fills parameters with seeded Glorot-uniform weights and zero biases.
  virtual void initialize(std::mt19937_64& rng) { (void)rng; }
  /// True when training-mode forward draws random masks.
  virtual bool stochastic() const { return false; }

  const std::string& name() const noexcept { return name_; }
  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool flag) noexcept { frozen_ = flag; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  const Parameter& parameter(const std::string& name) const;
  Parameter& parameter(const std::string& name);
  bool has_parameters() const noexcept { return !params_.empty(); }

 protected:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  Layer(const Layer&) = default;
  Layer& operator=(const Layer&) = default;

  Var bind(Tape& tape, const std::string& param_name) const;

  std::string name_;
  std::vector<Parameter> params_;
  bool frozen_ = false;
};

/// Number of stored scalars across a layer's parameters.
std::size_t param_count(const Layer& layer);

/// Marks the layer frozen (optimizer skips it). Returns the layer for chaining.
Layer& set_frozen(Layer& layer, bool flag);

/// Classic single-bias GRU returning the full hidden sequence.
/// Parameters: W_z, W_r, W_h [units x input]; U_z, U_r, U_h [units x units];
/// b_z, b_r, b_h [units]. Input dropout (rate in [0,1)) uses one inverted mask per
/// sample and feature, shared across time steps.
class GruLayer final : public Layer {
 public:
  GruLayer(std::string name, std::size_t input, std::size_t units, double dropout_rate = 0.0);

  LayerKind kind() const override { return LayerKind::gru; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GruLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json hyper() const override;
  std::size_t expected_param_count() const override { return 3 * units_ * (input_ + units_ + 1); }
  void initialize(std::mt19937_64& rng) override;
  bool stochastic() const override { return dropout_ > 0.0; }

  std::size_t input_size() const noexcept { return input_; }
  std::size_t units() const noexcept { return units_; }
  double dropout_rate() const noexcept { return dropout_; }

 private:
  std::size_t input_;
  std::size_t units_;
  double dropout_;
};

/// Same-padded stride-1 convolution followed by LeakyReLU (or identity when
/// negative_slope == 1).
class Conv2DLayer final : public Layer {
 public:
  Conv2DLayer(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
              std::size_t kernel_w, double negative_slope = 0.01);

  LayerKind kind() const override { return LayerKind::conv2d; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2DLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json hyper() const override;
  std::size_t expected_param_count() const override { return filters_ * (kh_ * kw_ * cin_) + filters_; }
  void initialize(std::mt19937_64& rng) override;

  std::size_t filters() const noexcept { return filters_; }
  double negative_slope() const noexcept { return slope_; }
  /// Convolution output before the activation.
  Var pre_activation(Tape& tape, Var x) const;

 private:
  std::size_t cin_, filters_, kh_, kw_;
  double slope_;
};

enum class Activation { linear, tanh };

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::string name, std::size_t in, std::size_t out, Activation activation = Activation::linear);

  LayerKind kind() const override { return LayerKind::dense; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json hyper() const override;
  std::size_t expected_param_count() const override { return out_ * (in_ + 1); }
  void initialize(std::mt19937_64& rng) override;

  Activation activation() const noexcept { return activation_; }
  Var pre_activation(Tape& tape, Var x) const;

 private:
  std::size_t in_, out_;
  Activation activation_;
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(std::string name, double rate);

  LayerKind kind() const override { return LayerKind::dropout; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }
  Shape output_shape(const Shape& input) const override { return input; }
  nlohmann::json hyper() const override { return {{"rate", rate_}}; }
  std::size_t expected_param_count() const override { return 0; }
  bool stochastic() const override { return rate_ > 0.0; }

 private:
  double rate_;
};

class AvgPool2DLayer final : public Layer {
 public:
  AvgPool2DLayer(std::string name, std::size_t pool_h, std::size_t pool_w);

  LayerKind kind() const override { return LayerKind::avgpool2d; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2DLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json hyper() const override { return {{"pool", {ph_, pw_}}}; }
  std::size_t expected_param_count() const override { return 0; }

  std::size_t pool_h() const noexcept { return ph_; }
  std::size_t pool_w() const noexcept { return pw_; }

 private:
  std::size_t ph_, pw_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(std::string name) : Layer(std::move(name)) {}

  LayerKind kind() const override { return LayerKind::flatten; }
  Var forward(Tape& tape, Var x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<FlattenLayer>(*this); }
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  nlohmann::json hyper() const override { return nlohmann::json::object(); }
  std::size_t expected_param_count() const override { return 0; }
};

/// Inverted-dropout mask (entries 0 or 1/(1-rate)).
Tensor dropout_mask(Shape shape, double rate, std::mt19937_64& rng);

/// Runs a GRU over one unbatched sequence [p, input] -> [p, units].
Tensor gru_forward(const Tensor& seq, const GruLayer& cell, bool training = false, std::uint64_t seed = 0);

}  // namespace trafficdtl
