#include "trafficdtl/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

ConstMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMapVec as_vec(const Tensor& t) {
  return ConstMapVec(t.data().data(), static_cast<Eigen::Index>(t.size()));
}
MapVec as_vec(Tensor& t) { return MapVec(t.data().data(), static_cast<Eigen::Index>(t.size())); }

Tape& same_tape(std::initializer_list<Var> vars, const char* op) {
  Tape* tape = vars.begin()->tape;
  for (const Var& v : vars) {
    if (v.tape == nullptr || v.tape != tape) {
      throw ShapeError(std::string(op) + ": operands belong to different tapes");
    }
  }
  return *tape;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b, const std::string& rule = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!rule.empty()) msg += " (" + rule + ")";
  throw ShapeError(msg);
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  const auto in = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::variable: return "variable";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::conv2d_same: return "conv2d_same";
    case OpKind::avgpool2d: return "avgpool2d";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::swap01: return "swap01";
    case OpKind::select_columns: return "select_columns";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

// --- Tape -------------------------------------------------------------------

Var Tape::push(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
               std::vector<Tensor> cache) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericalError(op_name(kind), std::string("op '") + op_name(kind) +
                                            "' produced a non-finite value (output shape " +
                                            shape_str(value.shape()) + ")");
  }
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_ && static_cast<bool>(backward);
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
    node.cache = std::move(cache);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(OpKind::constant, std::move(value), {}, nullptr); }

Var Tape::variable(Tensor value) {
  Var v = push(OpKind::variable, std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = grad_enabled_;
  return v;
}

Var Tape::parameter(const Parameter& param, bool trainable) {
  Var v = push(OpKind::parameter, param.value, {}, nullptr);
  nodes_[v.id].param = &param;
  nodes_[v.id].requires_grad = grad_enabled_ && trainable;
  return v;
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  return std::any_of(vars.begin(), vars.end(), [&](const Var& v) { return nodes_[v.id].requires_grad; });
}

bool Tape::any_requires_grad(const std::vector<Var>& vars) const {
  if (!grad_enabled_) return false;
  return std::any_of(vars.begin(), vars.end(), [&](const Var& v) { return nodes_[v.id].requires_grad; });
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
  return Tensor(n.value.shape());
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape != this) throw ShapeError("backward: loss belongs to another tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) {
    throw std::logic_error("backward: loss is detached (it does not depend on any trainable tape input)");
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }

  GradientMap grads;
  for (Node& n : nodes_) {
    if (n.kind != OpKind::parameter || !n.requires_grad || n.param == nullptr) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    auto [it, inserted] = grads.try_emplace(n.param, g);
    if (!inserted) as_vec(it->second) += as_vec(g);
  }
  return grads;
}

// --- elementwise & linear algebra ---------------------------------------------

Var matmul(Var a, Var b, bool transpose_b) {
  Tape& t = same_tape({a, b}, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) shape_mismatch("matmul", av.shape(), bv.shape(), "both operands must be rank 2");
  const std::size_t n = av.dim(0), k = av.dim(1);
  const std::size_t bk = transpose_b ? bv.dim(1) : bv.dim(0);
  const std::size_t m = transpose_b ? bv.dim(0) : bv.dim(1);
  if (bk != k) shape_mismatch("matmul", av.shape(), bv.shape(), transpose_b ? "a·bᵀ" : "a·b");

  Tensor out({n, m});
  if (transpose_b) {
    as_mat(out, n, m).noalias() = as_mat(av, n, k) * as_mat(bv, m, k).transpose();
  } else {
    as_mat(out, n, m).noalias() = as_mat(av, n, k) * as_mat(bv, k, m);
  }
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a, b})) {
    bw = [a = a.id, b = b.id, n, k, m, transpose_b](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_buffer(self);
      const Tensor& av = tp.node_value(a);
      const Tensor& bv = tp.node_value(b);
      if (tp.node_requires_grad(a)) {
        auto ga = as_mat(tp.grad_buffer(a), n, k);
        if (transpose_b) ga.noalias() += as_mat(g, n, m) * as_mat(bv, m, k);
        else ga.noalias() += as_mat(g, n, m) * as_mat(bv, k, m).transpose();
      }
      if (tp.node_requires_grad(b)) {
        if (transpose_b) as_mat(tp.grad_buffer(b), m, k).noalias() += as_mat(g, n, m).transpose() * as_mat(av, n, k);
        else as_mat(tp.grad_buffer(b), k, m).noalias() += as_mat(av, n, k).transpose() * as_mat(g, n, m);
      }
    };
  }
  return t.push(OpKind::matmul, std::move(out), {a.id, b.id}, std::move(bw));
}

Var add(Var a, Var b) {
  Tape& t = same_tape({a, b}, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = av;
  bool broadcast = false;
  if (av.shape() == bv.shape()) {
    as_vec(out) += as_vec(bv);
  } else {
    const Shape& as = av.shape();
    const Shape& bs = bv.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
      shape_mismatch("add", as, bs, "b must equal a or a's trailing dims");
    }
    broadcast = true;
    const std::size_t inner = bv.size();
    const std::size_t outer = inner == 0 ? 0 : av.size() / inner;
    as_mat(out, outer, inner).rowwise() += as_vec(bv).transpose();
  }
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a, b})) {
    bw = [a = a.id, b = b.id, broadcast](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_buffer(self);
      if (tp.node_requires_grad(a)) as_vec(tp.grad_buffer(a)) += as_vec(g);
      if (tp.node_requires_grad(b)) {
        Tensor& gb = tp.grad_buffer(b);
        if (!broadcast) {
          as_vec(gb) += as_vec(g);
        } else {
          const std::size_t inner = gb.size();
          const std::size_t outer = g.size() / inner;
          as_vec(gb) += as_mat(g, outer, inner).colwise().sum().transpose();
        }
      }
    };
  }
  return t.push(OpKind::add, std::move(out), {a.id, b.id}, std::move(bw));
}

Var sub(Var a, Var b) {
  Tape& t = same_tape({a, b}, "sub");
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  Tensor out = a.value();
  as_vec(out) -= as_vec(b.value());
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a, b})) {
    bw = [a = a.id, b = b.id](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_buffer(self);
      if (tp.node_requires_grad(a)) as_vec(tp.grad_buffer(a)) += as_vec(g);
      if (tp.node_requires_grad(b)) as_vec(tp.grad_buffer(b)) -= as_vec(g);
    };
  }
  return t.push(OpKind::sub, std::move(out), {a.id, b.id}, std::move(bw));
}

Var mul(Var a, Var b) {
  Tape& t = same_tape({a, b}, "mul");
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor out = a.value();
  as_vec(out).array() *= as_vec(b.value()).array();
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a, b})) {
    bw = [a = a.id, b = b.id](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_buffer(self);
      if (tp.node_requires_grad(a)) {
        as_vec(tp.grad_buffer(a)).array() += as_vec(g).array() * as_vec(tp.node_value(b)).array();
      }
      if (tp.node_requires_grad(b)) {
        as_vec(tp.grad_buffer(b)).array() += as_vec(g).array() * as_vec(tp.node_value(a)).array();
      }
    };
  }
  return t.push(OpKind::mul, std::move(out), {a.id, b.id}, std::move(bw));
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  as_vec(out) *= factor;
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, factor](Tape& tp, std::size_t self) {
      as_vec(tp.grad_buffer(a)) += factor * as_vec(tp.grad_buffer(self));
    };
  }
  return t.push(OpKind::scale, std::move(out), {a.id}, std::move(bw));
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Tensor out = map_values(a.value(), [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id](Tape& tp, std::size_t self) {
      const Tensor& y = tp.node_value(self);
      as_vec(tp.grad_buffer(a)).array() +=
          as_vec(tp.grad_buffer(self)).array() * as_vec(y).array() * (1.0 - as_vec(y).array());
    };
  }
  return t.push(OpKind::sigmoid, std::move(out), {a.id}, std::move(bw));
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Tensor out = map_values(a.value(), [](double x) { return std::tanh(x); });
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id](Tape& tp, std::size_t self) {
      const Tensor& y = tp.node_value(self);
      as_vec(tp.grad_buffer(a)).array() +=
          as_vec(tp.grad_buffer(self)).array() * (1.0 - as_vec(y).array().square());
    };
  }
  return t.push(OpKind::tanh, std::move(out), {a.id}, std::move(bw));
}

Var leaky_relu(Var a, double negative_slope) {
  Tape& t = *a.tape;
  Tensor out = map_values(a.value(), [negative_slope](double x) { return x > 0 ? x : negative_slope * x; });
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, negative_slope](Tape& tp, std::size_t self) {
      const auto x = tp.node_value(a).data();
      const auto g = tp.grad_buffer(self).data();
      auto ga = tp.grad_buffer(a).data();
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += x[i] > 0 ? g[i] : negative_slope * g[i];
    };
  }
  return t.push(OpKind::leaky_relu, std::move(out), {a.id}, std::move(bw));
}

// --- convolution & pooling ----------------------------------------------------

namespace detail {

ConvGeometry conv_geometry(const Shape& input, const Shape& filters) {
  if ((input.size() != 3 && input.size() != 4) || filters.size() != 4) {
    shape_mismatch("conv2d_same", input, filters, "input [B,h,w,cin] or [h,w,cin], filters [f,kh,kw,cin]");
  }
  const std::size_t off = input.size() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = off ? input[0] : 1;
  g.h = input[off];
  g.w = input[off + 1];
  g.cin = input[off + 2];
  g.filters = filters[0];
  g.kh = filters[1];
  g.kw = filters[2];
  if (filters[3] != g.cin) shape_mismatch("conv2d_same", input, filters, "input channels differ from filter depth");
  if (g.kh == 0 || g.kw == 0) shape_mismatch("conv2d_same", input, filters, "empty kernel");
  g.pad_top = (g.kh - 1) / 2;
  g.pad_left = (g.kw - 1) / 2;
  return g;
}

Tensor im2col(const Tensor& input, const ConvGeometry& g) {
  Tensor cols({g.rows(), g.patch()});
  const auto in = input.data();
  auto out = cols.data();
  const std::size_t patch = g.patch();
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* img = in.data() + b * g.h * g.w * g.cin;
    for (std::size_t i = 0; i < g.h; ++i) {
      for (std::size_t j = 0; j < g.w; ++j, ++row) {
        double* dst = out.data() + row * patch;
        for (std::size_t di = 0; di < g.kh; ++di) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + di) - static_cast<std::ptrdiff_t>(g.pad_top);
          for (std::size_t dj = 0; dj < g.kw; ++dj) {
            const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(j + dj) - static_cast<std::ptrdiff_t>(g.pad_left);
            double* cell = dst + (di * g.kw + dj) * g.cin;
            if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(g.h) || c >= static_cast<std::ptrdiff_t>(g.w)) {
              std::fill(cell, cell + g.cin, 0.0);
            } else {
              const double* src = img + (static_cast<std::size_t>(r) * g.w + static_cast<std::size_t>(c)) * g.cin;
              std::copy(src, src + g.cin, cell);
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Tensor& cols, const ConvGeometry& g, std::span<double> out) {
  const auto in = cols.data();
  const std::size_t patch = g.patch();
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    double* img = out.data() + b * g.h * g.w * g.cin;
    for (std::size_t i = 0; i < g.h; ++i) {
      for (std::size_t j = 0; j < g.w; ++j, ++row) {
        const double* src = in.data() + row * patch;
        for (std::size_t di = 0; di < g.kh; ++di) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + di) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t dj = 0; dj < g.kw; ++dj) {
            const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(j + dj) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (c < 0 || c >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const double* cell = src + (di * g.kw + dj) * g.cin;
            double* dst = img + (static_cast<std::size_t>(r) * g.w + static_cast<std::size_t>(c)) * g.cin;
            for (std::size_t ch = 0; ch < g.cin; ++ch) dst[ch] += cell[ch];
          }
        }
      }
    }
  }
}

}  // namespace detail

Var conv2d_same(Var input, Var filters, Var bias) {
  Tape& t = same_tape({input, filters, bias}, "conv2d_same");
  const Tensor& x = input.value();
  const Tensor& f = filters.value();
  const Tensor& bv = bias.value();
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), f.shape());
  if (bv.shape() != Shape{g.filters}) shape_mismatch("conv2d_same", f.shape(), bv.shape(), "bias must be [f]");

  Tensor cols = detail::im2col(x, g);
  Shape out_shape = x.rank() == 4 ? Shape{g.batch, g.h, g.w, g.filters} : Shape{g.h, g.w, g.filters};
  Tensor out(out_shape);
  auto om = as_mat(out, g.rows(), g.filters);
  om.noalias() = as_mat(cols, g.rows(), g.patch()) * as_mat(f, g.filters, g.patch()).transpose();
  om.rowwise() += as_vec(bv).transpose();

  Tape::BackwardFn bw;
  std::vector<Tensor> cache;
  if (t.any_requires_grad({input, filters, bias})) {
    bw = [x = input.id, w = filters.id, b = bias.id, g](Tape& tp, std::size_t self) {
      const auto gm = as_mat(tp.grad_buffer(self), g.rows(), g.filters);
      const Tensor& cols = tp.node_cache(self)[0];
      if (tp.node_requires_grad(w)) {
        as_mat(tp.grad_buffer(w), g.filters, g.patch()).noalias() += gm.transpose() * as_mat(cols, g.rows(), g.patch());
      }
      if (tp.node_requires_grad(b)) as_vec(tp.grad_buffer(b)) += gm.colwise().sum().transpose();
      if (tp.node_requires_grad(x)) {
        Tensor gcols({g.rows(), g.patch()});
        as_mat(gcols, g.rows(), g.patch()).noalias() = gm * as_mat(tp.node_value(w), g.filters, g.patch());
        detail::col2im_add(gcols, g, tp.grad_buffer(x).data());
      }
    };
    cache.push_back(std::move(cols));
  }
  return t.push(OpKind::conv2d_same, std::move(out), {input.id, filters.id, bias.id}, std::move(bw), std::move(cache));
}

Var avgpool2d(Var input, std::size_t pool_h, std::size_t pool_w) {
  Tape& t = *input.tape;
  const Tensor& x = input.value();
  if (x.rank() != 3 && x.rank() != 4) shape_mismatch("avgpool2d", x.shape(), {pool_h, pool_w}, "input [B,h,w,c] or [h,w,c]");
  if (pool_h == 0 || pool_w == 0) throw ShapeError("avgpool2d: pool size must be at least 1");
  const std::size_t off = x.rank() == 4 ? 1 : 0;
  const std::size_t batch = off ? x.dim(0) : 1;
  const std::size_t h = x.dim(off), w = x.dim(off + 1), c = x.dim(off + 2);
  const std::size_t oh = h / pool_h, ow = w / pool_w;
  if (oh == 0 || ow == 0) shape_mismatch("avgpool2d", x.shape(), {pool_h, pool_w}, "pool larger than input");
  Shape out_shape = off ? Shape{batch, oh, ow, c} : Shape{oh, ow, c};
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(pool_h * pool_w);
  const auto in = x.data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t di = 0; di < pool_h; ++di)
            for (std::size_t dj = 0; dj < pool_w; ++dj)
              acc += in[((b * h + i * pool_h + di) * w + j * pool_w + dj) * c + ch];
          o[((b * oh + i) * ow + j) * c + ch] = acc * inv;
        }
  Tape::BackwardFn bw;
  if (t.any_requires_grad({input})) {
    bw = [x = input.id, batch, h, w, c, oh, ow, pool_h, pool_w, inv](Tape& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self).data();
      auto gx = tp.grad_buffer(x).data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double v = g[((b * oh + i) * ow + j) * c + ch] * inv;
              for (std::size_t di = 0; di < pool_h; ++di)
                for (std::size_t dj = 0; dj < pool_w; ++dj)
                  gx[((b * h + i * pool_h + di) * w + j * pool_w + dj) * c + ch] += v;
            }
    };
  }
  return t.push(OpKind::avgpool2d, std::move(out), {input.id}, std::move(bw));
}

// --- structural -----------------------------------------------------------------

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = *parts.front().tape;
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ShapeError("concat: operands belong to different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_mismatch("concat", first, s, "rank differs");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) shape_mismatch("concat", first, s, "non-concat dims differ");
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = shape_size(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_size(Shape(first.begin() + static_cast<std::ptrdiff_t>(axis) + 1, first.end()));
  Tensor out(out_shape);
  auto o = out.data();
  const std::size_t out_stride = out_shape[axis] * inner;
  std::size_t pos = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    const std::size_t len = p.shape()[axis] * inner;
    for (std::size_t r = 0; r < outer; ++r) std::copy_n(src.data() + r * len, len, o.data() + r * out_stride + pos);
    ids.push_back(p.id);
    offsets.push_back(pos);
    pos += len;
  }
  Tape::BackwardFn bw;
  if (t.any_requires_grad(parts)) {
    bw = [ids, offsets, outer, out_stride](Tape& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self).data();
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (!tp.node_requires_grad(ids[k])) continue;
        auto gp = tp.grad_buffer(ids[k]).data();
        const std::size_t len = gp.size() / (outer == 0 ? 1 : outer);
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t i = 0; i < len; ++i) gp[r * len + i] += g[r * out_stride + offsets[k] + i];
      }
    };
  }
  return t.push(OpKind::concat, std::move(out), ids, std::move(bw));
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  Tape& t = *a.tape;
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  }
  const std::size_t outer = shape_size(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_size(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t src_stride = s[axis] * inner, len = length * inner, off = start * inner;
  const auto src = a.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < outer; ++r) std::copy_n(src.data() + r * src_stride + off, len, o.data() + r * len);
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, outer, src_stride, len, off](Tape& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self).data();
      auto ga = tp.grad_buffer(a).data();
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t i = 0; i < len; ++i) ga[r * src_stride + off + i] += g[r * len + i];
    };
  }
  return t.push(OpKind::slice, std::move(out), {a.id}, std::move(bw));
}

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape;
  Tensor out = a.value().reshaped(std::move(shape));
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id](Tape& tp, std::size_t self) {
      as_vec(tp.grad_buffer(a)) += as_vec(tp.grad_buffer(self));
    };
  }
  return t.push(OpKind::reshape, std::move(out), {a.id}, std::move(bw));
}

Var swap01(Var a) {
  Tape& t = *a.tape;
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("swap01: needs rank >= 2, got " + shape_str(s));
  const std::size_t d0 = s[0], d1 = s[1];
  const std::size_t inner = shape_size(Shape(s.begin() + 2, s.end()));
  Shape out_shape = s;
  std::swap(out_shape[0], out_shape[1]);
  Tensor out(out_shape);
  const auto src = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      std::copy_n(src.data() + (i * d1 + j) * inner, inner, o.data() + (j * d0 + i) * inner);
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, d0, d1, inner](Tape& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self).data();
      auto ga = tp.grad_buffer(a).data();
      for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t j = 0; j < d1; ++j)
          for (std::size_t k = 0; k < inner; ++k) ga[(i * d1 + j) * inner + k] += g[(j * d0 + i) * inner + k];
    };
  }
  return t.push(OpKind::swap01, std::move(out), {a.id}, std::move(bw));
}

Var select_columns(Var a, std::vector<std::size_t> columns) {
  Tape& t = *a.tape;
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("select_columns: scalar input");
  const std::size_t width = s.back();
  for (std::size_t c : columns) {
    if (c >= width) throw ShapeError("select_columns: column " + std::to_string(c) + " out of range for " + shape_str(s));
  }
  const std::size_t rows = a.value().size() / width;
  Shape out_shape = s;
  out_shape.back() = columns.size();
  Tensor out(out_shape);
  const auto src = a.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < columns.size(); ++k) o[r * columns.size() + k] = src[r * width + columns[k]];
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, columns, rows, width](Tape& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self).data();
      auto ga = tp.grad_buffer(a).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < columns.size(); ++k) ga[r * width + columns[k]] += g[r * columns.size() + k];
    };
  }
  return t.push(OpKind::select_columns, std::move(out), {a.id}, std::move(bw));
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Tensor out = Tensor::scalar(as_vec(a.value()).sum());
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id](Tape& tp, std::size_t self) {
      as_vec(tp.grad_buffer(a)).array() += tp.grad_buffer(self)[0];
    };
  }
  return t.push(OpKind::sum, std::move(out), {a.id}, std::move(bw));
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  Tensor out = Tensor::scalar(as_vec(a.value()).sum() / n);
  Tape::BackwardFn bw;
  if (t.any_requires_grad({a})) {
    bw = [a = a.id, n](Tape& tp, std::size_t self) {
      as_vec(tp.grad_buffer(a)).array() += tp.grad_buffer(self)[0] / n;
    };
  }
  return t.push(OpKind::mean, std::move(out), {a.id}, std::move(bw));
}

Var mse_loss(Var prediction, Var target) {
  Var d = sub(prediction, target);
  return mean(mul(d, d));
}

}  // namespace trafficdtl
