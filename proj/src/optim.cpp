#include "trafficdtl/optim.hpp"

#include <cmath>

namespace trafficdtl {

std::size_t Optimizer::step(ModelGraph& model, const GradientMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t updated = 0;
  for (std::size_t li = 0; li < model.layer_count(); ++li) {
    Layer& layer = model.layer(li);
    if (layer.frozen()) continue;
    for (Parameter& p : layer.parameters()) {
      auto it = grads.find(&p);
      if (it == grads.end()) continue;
      const auto g = it->second.data();
      auto w = p.value.data();
      if (config_.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.learning_rate * g[i];
      } else {
        Moments& st = state_[&p];
        if (st.m.size() != w.size()) {
          st.m = Tensor(p.value.shape());
          st.v = Tensor(p.value.shape());
        }
        auto m = st.m.data();
        auto v = st.v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
      }
      ++updated;
    }
  }
  return updated;
}

}  // namespace trafficdtl
