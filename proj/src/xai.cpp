#include "trafficdtl/xai.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "trafficdtl/dataset.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/io.hpp"
#include "trafficdtl/runtime.hpp"

namespace trafficdtl {

namespace {

constexpr double kLrpEps = 1e-9;

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// R / (z + eps sign(z)); a zero denominator is only legal when R is zero too.
double lrp_ratio(double r, double z, const std::string& where) {
  const double denom = z + kLrpEps * sign(z);
  if (denom == 0.0) {
    if (r == 0.0) return 0.0;
    throw NumericalError("lrp", "lrp: zero denominator with nonzero relevance in " + where);
  }
  return r / denom;
}

double total(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s;
}

void check_window(const ModelGraph& model, const Tensor& x) {
  if (x.shape() != Shape{model.window(), model.features()}) {
    throw ShapeError("attribution: expects a window [" + std::to_string(model.window()) + "," +
                     std::to_string(model.features()) + "], got " + shape_str(x.shape()));
  }
}

double sigmoid_value(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Relevance through a GRU over one sequence a [p,in] given output relevance [p,units].
Tensor lrp_gru(const GruLayer& g, const Tensor& a, const Tensor& r_out, LrpLayerStat& stat) {
  const std::size_t p = a.dim(0), in = g.input_size(), u = g.units();
  const auto& Wz = g.parameter("W_z").value;
  const auto& Wr = g.parameter("W_r").value;
  const auto& Wh = g.parameter("W_h").value;
  const auto& Uz = g.parameter("U_z").value;
  const auto& Ur = g.parameter("U_r").value;
  const auto& Uh = g.parameter("U_h").value;
  const auto& bz = g.parameter("b_z").value;
  const auto& br = g.parameter("b_r").value;
  const auto& bh = g.parameter("b_h").value;

  // Forward with the quantities the backward rule needs.
  std::vector<std::vector<double>> Z(p), RH(p), CAND(p), PRE(p), H(p + 1, std::vector<double>(u, 0.0));
  for (std::size_t t = 0; t < p; ++t) {
    const double* x = a.data().data() + t * in;
    const auto& h = H[t];
    Z[t].resize(u);
    RH[t].resize(u);
    CAND[t].resize(u);
    PRE[t].resize(u);
    std::vector<double> r(u);
    for (std::size_t k = 0; k < u; ++k) {
      double sz = bz[k], sr = br[k];
      for (std::size_t j = 0; j < in; ++j) sz += Wz[k * in + j] * x[j], sr += Wr[k * in + j] * x[j];
      for (std::size_t j = 0; j < u; ++j) sz += Uz[k * u + j] * h[j], sr += Ur[k * u + j] * h[j];
      Z[t][k] = sigmoid_value(sz);
      r[k] = sigmoid_value(sr);
    }
    for (std::size_t j = 0; j < u; ++j) RH[t][j] = r[j] * h[j];
    for (std::size_t k = 0; k < u; ++k) {
      double s = bh[k];
      for (std::size_t j = 0; j < in; ++j) s += Wh[k * in + j] * x[j];
      for (std::size_t j = 0; j < u; ++j) s += Uh[k * u + j] * RH[t][j];
      PRE[t][k] = s;
      CAND[t][k] = std::tanh(s);
      H[t + 1][k] = (1.0 - Z[t][k]) * h[k] + Z[t][k] * CAND[t][k];
    }
  }

  Tensor r_in({p, in});
  std::vector<double> carry(u, 0.0), r_cand(u), ratio(u);
  for (std::size_t t = p; t-- > 0;) {
    const auto& hprev = H[t];
    const auto& hcur = H[t + 1];
    std::vector<double> next(u, 0.0);
    for (std::size_t k = 0; k < u; ++k) {
      const double rh = r_out[t * u + k] + carry[k];
      const double f = lrp_ratio(rh, hcur[k], g.name());
      next[k] = f * (1.0 - Z[t][k]) * hprev[k];
      r_cand[k] = f * Z[t][k] * CAND[t][k];
      stat.stabilizer += f * kLrpEps * sign(hcur[k]);
    }
    // Candidate pre-activation: linear in x_t and r * h_{t-1}.
    for (std::size_t k = 0; k < u; ++k) {
      ratio[k] = lrp_ratio(r_cand[k], PRE[t][k], g.name());
      stat.bias += ratio[k] * bh[k];
      stat.stabilizer += ratio[k] * kLrpEps * sign(PRE[t][k]);
    }
    const double* x = a.data().data() + t * in;
    for (std::size_t j = 0; j < in; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < u; ++k) s += Wh[k * in + j] * ratio[k];
      r_in[t * in + j] = x[j] * s;
    }
    for (std::size_t j = 0; j < u; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < u; ++k) s += Uh[k * u + j] * ratio[k];
      next[j] += RH[t][j] * s;
    }
    carry = std::move(next);
  }
  return r_in;
}

// z-rule for a dense layer on one sample.
Tensor lrp_dense(const DenseLayer& d, const Tensor& a, const Tensor& r_out, LrpLayerStat& stat) {
  const auto& W = d.parameter("kernel").value;
  const auto& b = d.parameter("bias").value;
  const std::size_t out = W.dim(0), in = W.dim(1);
  Tensor r_in({in});
  for (std::size_t k = 0; k < out; ++k) {
    double z = b[k];
    for (std::size_t j = 0; j < in; ++j) z += W[k * in + j] * a[j];
    const double f = lrp_ratio(r_out[k], z, d.name());
    if (f == 0.0) continue;
    for (std::size_t j = 0; j < in; ++j) r_in[j] += a[j] * W[k * in + j] * f;
    stat.bias += f * b[k];
    stat.stabilizer += f * kLrpEps * sign(z);
  }
  return r_in;
}

Tensor lrp_conv(const Conv2DLayer& c, const Tensor& a, const Tensor& r_out, LrpLayerStat& stat) {
  const auto& W = c.parameter("kernel").value;
  const auto& b = c.parameter("bias").value;
  const auto g = detail::conv_geometry(a.shape(), W.shape());
  const Tensor cols = detail::im2col(a, g);
  const std::size_t rows = g.rows(), patch = g.patch(), f = g.filters;
  Tensor ratio({rows, f});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      double z = b[k];
      for (std::size_t j = 0; j < patch; ++j) z += cols[i * patch + j] * W[k * patch + j];
      const double q = lrp_ratio(r_out[i * f + k], z, c.name());
      ratio[i * f + k] = q;
      stat.bias += q * b[k];
      stat.stabilizer += q * kLrpEps * sign(z);
    }
  Tensor contrib({rows, patch});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < f; ++k) {
      const double q = ratio[i * f + k];
      if (q == 0.0) continue;
      for (std::size_t j = 0; j < patch; ++j) contrib[i * patch + j] += cols[i * patch + j] * W[k * patch + j] * q;
    }
  Tensor r_in(a.shape());
  detail::col2im_add(contrib, g, r_in.data());
  return r_in;
}

Tensor lrp_pool(const AvgPool2DLayer& pool, const Tensor& a, const Tensor& r_out) {
  // a: [1,h,w,c]
  const std::size_t h = a.dim(1), w = a.dim(2), c = a.dim(3);
  const std::size_t ph = pool.pool_h(), pw = pool.pool_w();
  const std::size_t oh = h / ph, ow = w / pw;
  const double share = 1.0 / static_cast<double>(ph * pw);
  Tensor r_in(a.shape());
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double r = r_out[(i * ow + j) * c + ch] * share;
        for (std::size_t di = 0; di < ph; ++di)
          for (std::size_t dj = 0; dj < pw; ++dj) r_in[((i * ph + di) * w + j * pw + dj) * c + ch] = r;
      }
  return r_in;
}

}  // namespace

Tensor sensitivity_maps(const ModelGraph& model, const Tensor& windows, std::size_t output) {
  if (windows.rank() != 3 || windows.dim(1) != model.window() || windows.dim(2) != model.features()) {
    throw ShapeError("sensitivity: expects windows [B," + std::to_string(model.window()) + "," +
                     std::to_string(model.features()) + "], got " + shape_str(windows.shape()));
  }
  if (output >= model.outputs()) throw std::out_of_range("sensitivity: output index out of range");
  ModelGraph fixed = model;
  fixed.freeze_all(true);
  Tape tape;
  const Var x = tape.variable(windows);
  const Var y = fixed.forward(tape, x, ForwardContext{});
  tape.backward(sum(slice(y, 1, output, 1)));
  return tape.grad(x);
}

Tensor sensitivity_map(const ModelGraph& model, const Tensor& x, std::size_t output) {
  check_window(model, x);
  return sensitivity_maps(model, x.reshaped({1, x.dim(0), x.dim(1)}), output).reshaped(x.shape());
}

Tensor smoothgrad(const ModelGraph& model, const Tensor& x, std::size_t output, const SmoothGradOptions& opt) {
  check_window(model, x);
  if (opt.samples == 0) throw std::invalid_argument("smoothgrad: needs at least one noise sample");
  if (opt.sigma < 0) throw std::invalid_argument("smoothgrad: sigma must be >= 0");
  if (opt.sigma == 0.0) return sensitivity_map(model, x, output);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, opt.sigma * 2.0);
  const std::size_t n = x.size();
  Tensor batch({opt.samples, x.dim(0), x.dim(1)});
  for (std::size_t s = 0; s < opt.samples; ++s)
    for (std::size_t k = 0; k < n; ++k) batch[s * n + k] = x[k] + noise(rng);
  const Tensor maps = sensitivity_maps(model, batch, output);
  Tensor out(x.shape());
  for (std::size_t s = 0; s < opt.samples; ++s)
    for (std::size_t k = 0; k < n; ++k) out[k] += maps[s * n + k];
  for (double& v : out.data()) v /= static_cast<double>(opt.samples);
  return out;
}

LrpResult lrp(const ModelGraph& model, const Tensor& x, std::size_t output) {
  check_window(model, x);
  if (output >= model.outputs()) throw std::out_of_range("lrp: output index out of range");
  // Forward once, keeping every layer's input.
  std::vector<Tensor> inputs;
  Tensor y;
  {
    Tape tape(false);
    Var h = model.adapt_input(tape, tape.constant(x.reshaped({1, x.dim(0), x.dim(1)})));
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
      inputs.push_back(h.value());
      h = model.layer(i).forward(tape, h, ForwardContext{});
    }
    y = h.value();
  }
  LrpResult res;
  res.output = y[output];
  Tensor r(y.shape());
  r[output] = res.output;

  for (std::size_t i = model.layer_count(); i-- > 0;) {
    const Layer& layer = model.layer(i);
    const Tensor& a = inputs[i];
    LrpLayerStat stat{layer.name(), total(r), 0, 0};
    switch (layer.kind()) {
      case LayerKind::dense:
        r = lrp_dense(static_cast<const DenseLayer&>(layer), a.reshaped({a.size()}), r.reshaped({r.size()}), stat);
        break;
      case LayerKind::conv2d:
        r = lrp_conv(static_cast<const Conv2DLayer&>(layer), a, r, stat);
        break;
      case LayerKind::gru: {
        const Tensor seq = a.reshaped({a.dim(1), a.dim(2)});
        const auto& g = static_cast<const GruLayer&>(layer);
        r = lrp_gru(g, seq, r.reshaped({a.dim(1), g.units()}), stat);
        break;
      }
      case LayerKind::avgpool2d:
        r = lrp_pool(static_cast<const AvgPool2DLayer&>(layer), a, r);
        break;
      case LayerKind::flatten:
      case LayerKind::dropout:
        break;
    }
    r = r.reshaped(a.shape());
    stat.relevance_in = total(r);
    stat.absorbed = stat.bias + stat.stabilizer;
    res.layers.push_back(stat);
  }

  // Back to canonical [p,m] order.
  const std::size_t p = model.window(), m = model.features();
  res.map = Tensor({p, m});
  std::vector<std::size_t> order(m);
  for (std::size_t c = 0; c < m; ++c) order[c] = c;
  if (model.arch() == Arch::cnn) order = model.hyper().value("column_order", order);
  for (std::size_t t = 0; t < p; ++t)
    for (std::size_t k = 0; k < m; ++k) res.map[t * m + order[k]] = r[t * m + k];
  return res;
}

const char* method_name(AttributionMethod m) { return m == AttributionMethod::smoothgrad ? "smoothgrad" : "lrp"; }

AttributionMethod parse_method(const std::string& name) {
  if (name == "smoothgrad") return AttributionMethod::smoothgrad;
  if (name == "lrp") return AttributionMethod::lrp;
  throw std::invalid_argument("unknown attribution method '" + name + "' (expected smoothgrad or lrp)");
}

AttributionMap aggregate_maps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw std::invalid_argument("aggregate_maps: needs at least one map");
  AttributionMap out;
  out.grid = Tensor(maps.front().shape());
  for (const Tensor& m : maps) {
    if (m.shape() != out.grid.shape()) throw ShapeError("aggregate_maps: maps differ in shape");
    for (std::size_t k = 0; k < m.size(); ++k) out.grid[k] += m[k] * m[k];
  }
  for (double& v : out.grid.data()) v /= static_cast<double>(maps.size());
  out.samples = maps.size();
  out.scaled = Tensor(out.grid.shape());
  const auto [lo, hi] = std::minmax_element(out.grid.data().begin(), out.grid.data().end());
  const double span = *hi - *lo;
  for (std::size_t k = 0; k < out.grid.size(); ++k) out.scaled[k] = span > 0 ? (out.grid[k] - *lo) / span : 0.0;
  return out;
}

AttributionMap attribute_dataset(const ModelGraph& model, const Tensor& windows, AttributionMethod method,
                                 std::size_t output, const AttributionOptions& opt) {
  if (windows.rank() != 3) throw ShapeError("attribute_dataset: expects [N,p,m], got " + shape_str(windows.shape()));
  const std::size_t stride = std::max<std::size_t>(opt.stride, 1);
  const std::size_t row = windows.dim(1) * windows.dim(2);
  std::vector<Tensor> maps;
  for (std::size_t i = 0; i < windows.dim(0); i += stride) {
    Tensor x({windows.dim(1), windows.dim(2)},
             std::vector<double>(windows.data().begin() + static_cast<std::ptrdiff_t>(i * row),
                                 windows.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * row)));
    if (method == AttributionMethod::lrp) {
      maps.push_back(lrp(model, x, output).map);
    } else {
      SmoothGradOptions sg = opt.smoothgrad;
      sg.seed = derive_seed(opt.smoothgrad.seed, "window/" + std::to_string(i));
      maps.push_back(smoothgrad(model, x, output, sg));
    }
  }
  AttributionMap out = aggregate_maps(maps);
  out.method = method;
  out.output = output;
  out.metadata = {{"arch", arch_name(model.arch())}, {"p", model.window()},    {"windows", windows.dim(0)},
                  {"stride", stride},                  {"samples", maps.size()}};
  if (method == AttributionMethod::smoothgrad) {
    out.metadata["noise_samples"] = opt.smoothgrad.samples;
    out.metadata["sigma"] = opt.smoothgrad.sigma;
    out.metadata["seed"] = opt.smoothgrad.seed;
  }
  return out;
}

std::pair<double, double> latest_vs_earliest(const Tensor& grid) {
  if (grid.rank() != 2) throw ShapeError("latest_vs_earliest: expects [p,m]");
  const std::size_t p = grid.dim(0), m = grid.dim(1), k = p / 3;
  if (k == 0) throw std::invalid_argument("latest_vs_earliest: needs p >= 3");
  double early = 0, late = 0;
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < m; ++c) {
      early += grid[r * m + c];
      late += grid[(p - 1 - r) * m + c];
    }
  const double n = static_cast<double>(k * m);
  return {late / n, early / n};
}

std::filesystem::path export_heatmaps(const std::filesystem::path& dir, const std::vector<AttributionMap>& maps) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const AttributionMap& a : maps) {
    const std::string target = a.output < kTargetColumns.size() ? kTargetColumns[a.output] : std::to_string(a.output);
    const std::string file = std::string(method_name(a.method)) + "_" + target + ".csv";
    std::ofstream os(dir / file, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write heatmap '" + (dir / file).string() + "'");
    const std::size_t p = a.grid.dim(0), m = a.grid.dim(1);
    os << "step";
    for (std::size_t c = 0; c < m; ++c) os << ',' << (c < kInputColumns.size() ? kInputColumns[c] : std::to_string(c));
    os << '\n';
    char buf[64];
    for (std::size_t r = 0; r < p; ++r) {
      // step -(p-1) is the oldest input, 0 the newest
      os << static_cast<long long>(r) - static_cast<long long>(p - 1);
      for (std::size_t c = 0; c < m; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.10g", a.grid[r * m + c]);
        os << buf;
      }
      os << '\n';
    }
    const auto [lo, hi] = std::minmax_element(a.grid.data().begin(), a.grid.data().end());
    index.push_back({{"file", file},
                     {"method", method_name(a.method)},
                     {"output", target},
                     {"samples", a.samples},
                     {"min", *lo},
                     {"max", *hi},
                     {"metadata", a.metadata}});
  }
  const auto path = dir / "index.json";
  write_json(path, {{"format", "trafficdtl-heatmaps/1"}, {"maps", index}});
  return path;
}

}  // namespace trafficdtl
