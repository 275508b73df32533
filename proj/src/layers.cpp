#include "trafficdtl/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

namespace {

void check_rate(double rate, const std::string& where) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument(where + ": dropout rate " + std::to_string(rate) + " outside [0, 1)");
  }
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.data()) v = dist(rng);
}

void zero(Tensor& t) {
  for (double& v : t.data()) v = 0.0;
}

Shape batch_shape(const Var& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::gru: return "gru";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

const Parameter& Layer::parameter(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("layer '" + name_ + "' has no parameter '" + name + "'");
}

Parameter& Layer::parameter(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const Layer&>(*this).parameter(name));
}

Var Layer::bind(Tape& tape, const std::string& param_name) const {
  return tape.parameter(parameter(param_name), !frozen_);
}

std::size_t param_count(const Layer& layer) {
  std::size_t n = 0;
  for (const Parameter& p : layer.parameters()) n += p.value.size();
  return n;
}

Layer& set_frozen(Layer& layer, bool flag) {
  layer.set_frozen(flag);
  return layer;
}

Tensor dropout_mask(Shape shape, double rate, std::mt19937_64& rng) {
  Tensor mask(std::move(shape), 1.0);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double kept = 1.0 / (1.0 - rate);
  for (double& v : mask.data()) v = keep(rng) ? kept : 0.0;
  return mask;
}

// --- GRU ----------------------------------------------------------------------

GruLayer::GruLayer(std::string name, std::size_t input, std::size_t units, double dropout_rate)
    : Layer(std::move(name)), input_(input), units_(units), dropout_(dropout_rate) {
  check_rate(dropout_rate, "gru '" + name_ + "'");
  if (input == 0 || units == 0) throw std::invalid_argument("gru: input and units must be positive");
  for (const char* g : {"W_z", "W_r", "W_h"}) params_.push_back({g, Tensor({units, input})});
  for (const char* g : {"U_z", "U_r", "U_h"}) params_.push_back({g, Tensor({units, units})});
  for (const char* g : {"b_z", "b_r", "b_h"}) params_.push_back({g, Tensor({units})});
}

void GruLayer::initialize(std::mt19937_64& rng) {
  for (Parameter& p : params_) {
    if (p.name[0] == 'W') glorot_uniform(p.value, input_, units_, rng);
    else if (p.name[0] == 'U') glorot_uniform(p.value, units_, units_, rng);
    else zero(p.value);
  }
}

Shape GruLayer::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != input_) {
    throw ShapeError("gru '" + name_ + "': expects [p," + std::to_string(input_) + "], got " + shape_str(input));
  }
  return {input[0], units_};
}

nlohmann::json GruLayer::hyper() const {
  return {{"input", input_}, {"units", units_}, {"dropout", dropout_}, {"activation", "tanh"},
          {"recurrent_activation", "sigmoid"}};
}

Var GruLayer::forward(Tape& tape, Var x, const ForwardContext& ctx) const {
  const Shape in = x.shape();
  if (in.size() != 3 || in[2] != input_) {
    throw ShapeError("gru '" + name_ + "': expects [B,p," + std::to_string(input_) + "], got " + shape_str(in));
  }
  const std::size_t batch = in[0], steps = in[1];

  Var seq = swap01(x);  // [p,B,in]
  if (ctx.training && dropout_ > 0.0) {
    if (ctx.rng == nullptr) throw std::logic_error("gru: training with dropout needs an rng");
    Tensor per_sample = dropout_mask({batch, input_}, dropout_, *ctx.rng);
    Tensor mask({steps, batch, input_});
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(per_sample.data().begin(), per_sample.data().end(), mask.data().begin() + t * batch * input_);
    }
    seq = mul(seq, tape.constant(std::move(mask)));
  }
  Var flat = reshape(seq, {steps * batch, input_});

  const Var xz = add(matmul(flat, bind(tape, "W_z"), true), bind(tape, "b_z"));
  const Var xr = add(matmul(flat, bind(tape, "W_r"), true), bind(tape, "b_r"));
  const Var xh = add(matmul(flat, bind(tape, "W_h"), true), bind(tape, "b_h"));
  const Var uz = bind(tape, "U_z");
  const Var ur = bind(tape, "U_r");
  const Var uh = bind(tape, "U_h");

  Var h = tape.constant(Tensor({batch, units_}));
  std::vector<Var> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Var z = sigmoid(add(slice(xz, 0, t * batch, batch), matmul(h, uz, true)));
    const Var r = sigmoid(add(slice(xr, 0, t * batch, batch), matmul(h, ur, true)));
    const Var cand = tanh(add(slice(xh, 0, t * batch, batch), matmul(mul(r, h), uh, true)));
    h = add(h, mul(z, sub(cand, h)));
    outputs.push_back(h);
  }
  Var out = reshape(concat(outputs, 0), {steps, batch, units_});
  return swap01(out);
}

Tensor gru_forward(const Tensor& seq, const GruLayer& cell, bool training, std::uint64_t seed) {
  if (seq.rank() != 2) throw ShapeError("gru_forward: expects [p,input], got " + shape_str(seq.shape()));
  Tape tape(false);
  std::mt19937_64 rng(seed);
  ForwardContext ctx{training, &rng};
  Var x = tape.constant(seq.reshaped({1, seq.dim(0), seq.dim(1)}));
  Var y = cell.forward(tape, x, ctx);
  return y.value().reshaped({seq.dim(0), cell.units()});
}

// --- Conv2D -------------------------------------------------------------------

Conv2DLayer::Conv2DLayer(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel_h,
                         std::size_t kernel_w, double negative_slope)
    : Layer(std::move(name)), cin_(in_channels), filters_(filters), kh_(kernel_h), kw_(kernel_w),
      slope_(negative_slope) {
  if (!cin_ || !filters_ || !kh_ || !kw_) throw std::invalid_argument("conv2d: sizes must be positive");
  params_.push_back({"kernel", Tensor({filters_, kh_, kw_, cin_})});
  params_.push_back({"bias", Tensor({filters_})});
}

void Conv2DLayer::initialize(std::mt19937_64& rng) {
  glorot_uniform(params_[0].value, kh_ * kw_ * cin_, kh_ * kw_ * filters_, rng);
  zero(params_[1].value);
}

Shape Conv2DLayer::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[2] != cin_) {
    throw ShapeError("conv2d '" + name_ + "': expects [h,w," + std::to_string(cin_) + "], got " + shape_str(input));
  }
  return {input[0], input[1], filters_};
}

nlohmann::json Conv2DLayer::hyper() const {
  return {{"in_channels", cin_}, {"filters", filters_}, {"kernel", {kh_, kw_}}, {"stride", 1},
          {"padding", "same"}, {"activation", "leaky_relu"}, {"negative_slope", slope_}};
}

Var Conv2DLayer::pre_activation(Tape& tape, Var x) const {
  return conv2d_same(x, bind(tape, "kernel"), bind(tape, "bias"));
}

Var Conv2DLayer::forward(Tape& tape, Var x, const ForwardContext&) const {
  return leaky_relu(pre_activation(tape, x), slope_);
}

// --- Dense --------------------------------------------------------------------

DenseLayer::DenseLayer(std::string name, std::size_t in, std::size_t out, Activation activation)
    : Layer(std::move(name)), in_(in), out_(out), activation_(activation) {
  if (!in_ || !out_) throw std::invalid_argument("dense: sizes must be positive");
  params_.push_back({"kernel", Tensor({out_, in_})});
  params_.push_back({"bias", Tensor({out_})});
}

void DenseLayer::initialize(std::mt19937_64& rng) {
  glorot_uniform(params_[0].value, in_, out_, rng);
  zero(params_[1].value);
}

Shape DenseLayer::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != in_) {
    throw ShapeError("dense '" + name_ + "': expects [" + std::to_string(in_) + "], got " + shape_str(input));
  }
  return {out_};
}

nlohmann::json DenseLayer::hyper() const {
  return {{"in", in_}, {"out", out_}, {"activation", activation_ == Activation::tanh ? "tanh" : "linear"}};
}

Var DenseLayer::pre_activation(Tape& tape, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw ShapeError("dense '" + name_ + "': expects [B," + std::to_string(in_) + "], got " + shape_str(x.shape()));
  }
  return add(matmul(x, bind(tape, "kernel"), true), bind(tape, "bias"));
}

Var DenseLayer::forward(Tape& tape, Var x, const ForwardContext&) const {
  Var z = pre_activation(tape, x);
  return activation_ == Activation::tanh ? tanh(z) : z;
}

// --- parameterless ------------------------------------------------------------

DropoutLayer::DropoutLayer(std::string name, double rate) : Layer(std::move(name)), rate_(rate) {
  check_rate(rate, "dropout '" + name_ + "'");
}

Var DropoutLayer::forward(Tape& tape, Var x, const ForwardContext& ctx) const {
  if (!ctx.training || rate_ == 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout: training needs an rng");
  return mul(x, tape.constant(dropout_mask(x.shape(), rate_, *ctx.rng)));
}

AvgPool2DLayer::AvgPool2DLayer(std::string name, std::size_t pool_h, std::size_t pool_w)
    : Layer(std::move(name)), ph_(pool_h), pw_(pool_w) {
  if (!ph_ || !pw_) throw std::invalid_argument("avgpool2d: pool size must be at least 1");
}

Shape AvgPool2DLayer::output_shape(const Shape& input) const {
  if (input.size() != 3) throw ShapeError("avgpool2d '" + name_ + "': expects [h,w,c], got " + shape_str(input));
  return {input[0] / ph_, input[1] / pw_, input[2]};
}

Var AvgPool2DLayer::forward(Tape&, Var x, const ForwardContext&) const { return avgpool2d(x, ph_, pw_); }

Var FlattenLayer::forward(Tape&, Var x, const ForwardContext&) const {
  const Shape in = batch_shape(x);
  return reshape(x, {x.shape()[0], shape_size(in)});
}

}  // namespace trafficdtl
