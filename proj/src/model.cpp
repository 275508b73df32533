#include "trafficdtl/model.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

const char* arch_name(Arch arch) { return arch == Arch::rnn ? "rnn" : "cnn"; }

Arch parse_arch(const std::string& name) {
  if (name == "rnn") return Arch::rnn;
  if (name == "cnn") return Arch::cnn;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected rnn or cnn)");
}

nlohmann::json to_json(const RnnHyper& h) {
  return {{"units", h.units}, {"dropout_first", h.dropout_first}, {"dropout_last", h.dropout_last}};
}

nlohmann::json to_json(const CnnHyper& h) {
  return {{"filters_early", h.filters_early}, {"filters_late", h.filters_late}, {"kernels", h.kernels},
          {"pool", h.pool}, {"negative_slope", h.negative_slope}, {"column_order", h.column_order}};
}

RnnHyper rnn_hyper_from_json(const nlohmann::json& j) {
  RnnHyper h;
  h.units = j.value("units", h.units);
  h.dropout_first = j.value("dropout_first", h.dropout_first);
  h.dropout_last = j.value("dropout_last", h.dropout_last);
  return h;
}

CnnHyper cnn_hyper_from_json(const nlohmann::json& j) {
  CnnHyper h;
  h.filters_early = j.value("filters_early", h.filters_early);
  h.filters_late = j.value("filters_late", h.filters_late);
  h.kernels = j.value("kernels", h.kernels);
  h.pool = j.value("pool", h.pool);
  h.negative_slope = j.value("negative_slope", h.negative_slope);
  h.column_order = j.value("column_order", h.column_order);
  return h;
}

ModelGraph::ModelGraph(Arch arch, std::size_t p, std::size_t m, std::size_t q, nlohmann::json hyper)
    : arch_(arch), p_(p), m_(m), q_(q), hyper_(std::move(hyper)) {}

ModelGraph::ModelGraph(const ModelGraph& other)
    : arch_(other.arch_), p_(other.p_), m_(other.m_), q_(other.q_), hyper_(other.hyper_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    ModelGraph copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::vector<std::size_t> ModelGraph::parameterized_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->has_parameters()) idx.push_back(i);
  }
  return idx;
}

Var ModelGraph::adapt_input(Tape& tape, Var x) const {
  (void)tape;
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != p_ || s[2] != m_) {
    throw ShapeError(std::string(arch_name(arch_)) + " model: expects input [B," + std::to_string(p_) + "," +
                     std::to_string(m_) + "], got " + shape_str(s));
  }
  if (arch_ == Arch::rnn) return x;
  std::vector<std::size_t> order = hyper_.value("column_order", std::vector<std::size_t>{});
  Var cols = order.empty() ? x : select_columns(x, order);
  return reshape(cols, {s[0], p_, m_, 1});
}

Var ModelGraph::forward(Tape& tape, Var x, const ForwardContext& ctx) const {
  return forward_range(tape, adapt_input(tape, x), 0, layers_.size(), ctx);
}

Var ModelGraph::forward_range(Tape& tape, Var h, std::size_t begin, std::size_t end, const ForwardContext& ctx) const {
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward(tape, h, ctx);
  return h;
}

Tensor ModelGraph::run(const Tensor& input, std::size_t begin, std::size_t end, std::size_t batch) const {
  if (input.rank() < 2) throw ShapeError("run: expects a batched input, got " + shape_str(input.shape()));
  if (begin > end || end > layers_.size()) throw std::out_of_range("run: bad layer range");
  const std::size_t n = input.dim(0);
  const std::size_t row = n ? input.size() / n : 0;
  Shape sample(input.shape().begin() + 1, input.shape().end());
  Tensor out;
  std::size_t out_row = 0;
  ForwardContext ctx;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    Tape tape(false);
    Shape s = sample;
    s.insert(s.begin(), len);
    std::vector<double> chunk(input.data().begin() + static_cast<std::ptrdiff_t>(start * row),
                              input.data().begin() + static_cast<std::ptrdiff_t>((start + len) * row));
    Var x = tape.constant(Tensor(std::move(s), std::move(chunk)));
    if (begin == 0) x = adapt_input(tape, x);
    const Tensor& y = forward_range(tape, x, begin, end, ctx).value();
    if (start == 0) {
      Shape os = y.shape();
      os[0] = n;
      out = Tensor(os);
      out_row = y.size() / len;
    }
    std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * out_row));
  }
  return out;
}

Tensor ModelGraph::predict(const Tensor& windows, std::size_t batch) const {
  if (windows.rank() != 3) throw ShapeError("predict: expects [N,p,m], got " + shape_str(windows.shape()));
  if (windows.dim(0) == 0) return Tensor({0, q_});
  return run(windows, 0, layers_.size(), batch);
}

std::size_t ModelGraph::frozen_prefix() const {
  std::size_t k = 0;
  while (k < layers_.size() && (layers_[k]->frozen() || !layers_[k]->has_parameters()) && !layers_[k]->stochastic()) ++k;
  return k;
}

std::size_t ModelGraph::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += trafficdtl::param_count(*l);
  return n;
}

std::size_t ModelGraph::trainable_param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    if (!l->frozen()) n += trafficdtl::param_count(*l);
  }
  return n;
}

void ModelGraph::freeze_all(bool flag) {
  for (auto& l : layers_) l->set_frozen(flag);
}

void ModelGraph::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) l->initialize(rng);
}

nlohmann::json ModelGraph::summary() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"name", l->name()},
                      {"kind", layer_kind_name(l->kind())},
                      {"hyper", l->hyper()},
                      {"param_count", trafficdtl::param_count(*l)},
                      {"frozen", l->frozen()}});
  }
  return {{"arch", arch_name(arch_)}, {"p", p_},         {"m", m_}, {"q", q_},
          {"hyper", hyper_},          {"layers", layers}, {"param_count", param_count()},
          {"trainable_param_count", trainable_param_count()}};
}

ModelGraph build_rnn(std::size_t p, std::size_t m, std::size_t q, const RnnHyper& hyper, std::uint64_t seed) {
  if (p < 1) throw std::invalid_argument("build_rnn: window length p must be >= 1");
  ModelGraph g(Arch::rnn, p, m, q, to_json(hyper));
  const auto& u = hyper.units;
  g.add_layer(std::make_unique<GruLayer>("gru_1", m, u[0], hyper.dropout_first));
  g.add_layer(std::make_unique<GruLayer>("gru_2", u[0], u[1]));
  g.add_layer(std::make_unique<GruLayer>("gru_3", u[1], u[2]));
  g.add_layer(std::make_unique<GruLayer>("gru_4", u[2], u[3], hyper.dropout_last));
  g.add_layer(std::make_unique<FlattenLayer>("flatten"));
  g.add_layer(std::make_unique<DenseLayer>("dense", p * u[3], q, Activation::tanh));
  g.initialize(seed);
  return g;
}

ModelGraph build_cnn(std::size_t p, std::size_t m, std::size_t q, const CnnHyper& hyper, std::uint64_t seed) {
  if (p < hyper.pool[0]) throw std::invalid_argument("build_cnn: window length p must be >= pool height");
  if (!hyper.column_order.empty()) {
    std::vector<std::size_t> sorted = hyper.column_order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expect(m);
    std::iota(expect.begin(), expect.end(), 0);
    if (sorted != expect) throw std::invalid_argument("build_cnn: column_order must be a permutation of 0..m-1");
  }
  ModelGraph g(Arch::cnn, p, m, q, to_json(hyper));
  const std::array<std::size_t, 4> filters{hyper.filters_early, hyper.filters_early, hyper.filters_late,
                                           hyper.filters_late};
  std::size_t cin = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    g.add_layer(std::make_unique<Conv2DLayer>("conv_" + std::to_string(i + 1), cin, filters[i], hyper.kernels[i][0],
                                              hyper.kernels[i][1], hyper.negative_slope));
    cin = filters[i];
  }
  g.add_layer(std::make_unique<AvgPool2DLayer>("avgpool", hyper.pool[0], hyper.pool[1]));
  g.add_layer(std::make_unique<FlattenLayer>("flatten"));
  const std::size_t dense_in = (p / hyper.pool[0]) * (m / hyper.pool[1]) * cin;
  g.add_layer(std::make_unique<DenseLayer>("dense", dense_in, q, Activation::tanh));
  g.initialize(seed);
  return g;
}

ModelGraph build_from_summary(const nlohmann::json& summary, std::uint64_t seed) {
  const Arch arch = parse_arch(summary.at("arch").get<std::string>());
  const auto p = summary.at("p").get<std::size_t>();
  const auto m = summary.at("m").get<std::size_t>();
  const auto q = summary.at("q").get<std::size_t>();
  const nlohmann::json& hyper = summary.at("hyper");
  return arch == Arch::rnn ? build_rnn(p, m, q, rnn_hyper_from_json(hyper), seed)
                           : build_cnn(p, m, q, cnn_hyper_from_json(hyper), seed);
}

void require_same_architecture(const ModelGraph& a, const ModelGraph& b) {
  std::ostringstream diff;
  if (a.arch() != b.arch()) diff << " arch(" << arch_name(a.arch()) << " vs " << arch_name(b.arch()) << ")";
  if (a.window() != b.window() || a.features() != b.features() || a.outputs() != b.outputs()) {
    diff << " io([" << a.window() << "," << a.features() << "]->" << a.outputs() << " vs [" << b.window() << ","
         << b.features() << "]->" << b.outputs() << ")";
  }
  const std::size_t n = std::max(a.layer_count(), b.layer_count());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= a.layer_count() || i >= b.layer_count()) {
      diff << " layer#" << i << "(missing)";
      continue;
    }
    const Layer& la = a.layer(i);
    const Layer& lb = b.layer(i);
    bool same = la.kind() == lb.kind() && la.hyper() == lb.hyper() && la.parameters().size() == lb.parameters().size();
    for (std::size_t k = 0; same && k < la.parameters().size(); ++k) {
      same = la.parameters()[k].value.shape() == lb.parameters()[k].value.shape();
    }
    if (!same) diff << " layer#" << i << "(" << la.name() << " vs " << lb.name() << ")";
  }
  if (!diff.str().empty()) throw ShapeError("architecture mismatch:" + diff.str());
}

}  // namespace trafficdtl
