#include "trafficdtl/svr.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "trafficdtl/error.hpp"
#include "trafficdtl/runtime.hpp"

namespace trafficdtl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kTau = 1e-12;

double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
  double d2 = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

// Kernel rows over the l training points with least-recently-used eviction.
class KernelCache {
 public:
  KernelCache(const Tensor& X, double gamma, std::size_t cache_mb)
      : X_(X.data().data(), static_cast<Eigen::Index>(X.dim(0)), static_cast<Eigen::Index>(X.dim(1))),
        gamma_(gamma),
        l_(X.dim(0)) {
    norms_ = X_.rowwise().squaredNorm();
    capacity_ = std::max<std::size_t>(2, cache_mb * (std::size_t{1} << 20) / (sizeof(double) * std::max<std::size_t>(l_, 1)));
  }

  const std::vector<double>& row(std::size_t b) {
    if (auto it = rows_.find(b); it != rows_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
    if (rows_.size() >= capacity_) {
      rows_.erase(lru_.back());
      lru_.pop_back();
    }
    std::vector<double> r(l_);
    Eigen::Map<Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(l_));
    rv.noalias() = X_ * X_.row(static_cast<Eigen::Index>(b)).transpose();
    for (std::size_t t = 0; t < l_; ++t) {
      const double d2 = std::max(0.0, norms_[static_cast<Eigen::Index>(t)] + norms_[static_cast<Eigen::Index>(b)] - 2.0 * r[t]);
      r[t] = t == b ? 1.0 : std::exp(-gamma_ * d2);
    }
    lru_.push_front(b);
    auto [it, ok] = rows_.emplace(b, std::make_pair(std::move(r), lru_.begin()));
    (void)ok;
    return it->second.first;
  }

 private:
  Eigen::Map<const RowMatrix> X_;
  Eigen::VectorXd norms_;
  double gamma_;
  std::size_t l_;
  std::size_t capacity_;
  std::list<std::size_t> lru_;
  std::unordered_map<std::size_t, std::pair<std::vector<double>, std::list<std::size_t>::iterator>> rows_;
};

void validate(const Tensor& X, std::span<const double> y, const SvrParams& p) {
  if (X.rank() != 2) throw ShapeError("svr: X must be [N,d], got " + shape_str(X.shape()));
  if (X.dim(0) == 0) throw std::invalid_argument("svr: needs at least one training point");
  if (y.size() != X.dim(0)) throw ShapeError("svr: " + std::to_string(y.size()) + " targets for " + std::to_string(X.dim(0)) + " points");
  if (!(p.C > 0)) throw std::invalid_argument("svr: C must be > 0");
  if (!(p.epsilon >= 0)) throw std::invalid_argument("svr: epsilon must be >= 0");
  if (!(p.tol > 0)) throw std::invalid_argument("svr: tol must be > 0");
}

}  // namespace

double default_gamma(const Tensor& X) {
  if (X.rank() != 2 || X.size() == 0) throw ShapeError("default_gamma: X must be a nonempty [N,d]");
  double mean = 0;
  for (double v : X.data()) mean += v;
  mean /= static_cast<double>(X.size());
  double var = 0;
  for (double v : X.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(X.size());
  const double d = static_cast<double>(X.dim(1));
  return var > 0 ? 1.0 / (d * var) : 1.0 / d;
}

double SvrModel::predict(std::span<const double> x) const {
  const std::size_t d = support_vectors.rank() == 2 ? support_vectors.dim(1) : 0;
  if (!coef.empty() && x.size() != d) {
    throw ShapeError("svr predict: input has " + std::to_string(x.size()) + " features, model expects " + std::to_string(d));
  }
  double s = bias;
  for (std::size_t i = 0; i < coef.size(); ++i) s += coef[i] * rbf(support_vectors.data().subspan(i * d, d), x, gamma);
  return s;
}

std::vector<double> SvrModel::predict(const Tensor& X) const {
  if (X.rank() != 2) throw ShapeError("svr predict: X must be [N,d]");
  std::vector<double> out(X.dim(0));
  const std::size_t d = X.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict(X.data().subspan(i * d, d));
  return out;
}

SvrModel svr_fit_dual(const Tensor& X, std::span<const double> target, const SvrParams& params, SvrDual& dual,
                      SvrFitInfo* info) {
  validate(X, target, params);
  const std::size_t l = X.dim(0), n = 2 * l;
  const double C = params.C;
  const double gamma = params.gamma > 0 ? params.gamma : default_gamma(X);
  KernelCache cache(X, gamma, params.cache_mb);

  // Variables 0..l-1 are alpha (label +1), l..2l-1 are alpha* (label -1).
  std::vector<double> a(n, 0.0), G(n), lin(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < l; ++i) {
    y[i] = 1;
    y[i + l] = -1;
    lin[i] = params.epsilon - target[i];
    lin[i + l] = params.epsilon + target[i];
  }
  G = lin;

  std::vector<std::size_t> scan(n);
  std::iota(scan.begin(), scan.end(), 0);
  std::mt19937_64 rng(params.seed);
  std::shuffle(scan.begin(), scan.end(), rng);

  auto q = [&](std::size_t i, std::size_t t, const std::vector<double>& Ki) {
    return static_cast<double>(y[i] * y[t]) * Ki[t % l];
  };
  auto objective = [&] {
    double s = 0;
    for (std::size_t t = 0; t < n; ++t) s += a[t] * (G[t] + lin[t]);
    return 0.5 * s;
  };

  SvrFitInfo local;
  SvrFitInfo& st = info ? *info : local;
  st = SvrFitInfo{};
  double gap = 0;
  std::size_t iter = 0;
  for (;;) {
    // Maximal violating i, then j by second-order gain.
    double gmax = -INFINITY;
    std::size_t i = n;
    for (std::size_t t : scan) {
      if (y[t] == 1) {
        if (a[t] < C && -G[t] >= gmax) gmax = -G[t], i = t;
      } else if (a[t] > 0 && G[t] >= gmax) {
        gmax = G[t], i = t;
      }
    }
    double gmax2 = -INFINITY, best = INFINITY;
    std::size_t j = n;
    if (i != n) {
      const std::vector<double>& Ki = cache.row(i % l);
      for (std::size_t t : scan) {
        if (y[t] == 1) {
          if (a[t] > 0) {
            const double diff = gmax + G[t];
            gmax2 = std::max(gmax2, G[t]);
            if (diff > 0) {
              const double quad = 2.0 - 2.0 * y[i] * q(i, t, Ki);
              const double obj = -diff * diff / (quad > 0 ? quad : kTau);
              if (obj <= best) best = obj, j = t;
            }
          }
        } else if (a[t] < C) {
          const double diff = gmax - G[t];
          gmax2 = std::max(gmax2, -G[t]);
          if (diff > 0) {
            const double quad = 2.0 + 2.0 * y[i] * q(i, t, Ki);
            const double obj = -diff * diff / (quad > 0 ? quad : kTau);
            if (obj <= best) best = obj, j = t;
          }
        }
      }
    }
    gap = gmax + gmax2;
    if (i == n || j == n || gap < params.tol) break;
    if (iter >= params.max_iterations) {
      throw ConvergenceError("svr: no convergence after " + std::to_string(iter) + " iterations (KKT gap " +
                                 std::to_string(gap) + ", tol " + std::to_string(params.tol) + ")",
                             gap);
    }
    ++iter;

    const std::vector<double> Ki = cache.row(i % l);
    const std::vector<double>& Kj = cache.row(j % l);
    const double qij = q(i, j, Ki);
    const double old_i = a[i], old_j = a[j];
    if (y[i] != y[j]) {
      double quad = 2.0 + 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0) {
        if (a[j] < 0) a[j] = 0, a[i] = diff;
      } else if (a[i] < 0) {
        a[i] = 0, a[j] = -diff;
      }
      if (diff > 0) {
        if (a[i] > C) a[i] = C, a[j] = C - diff;
      } else if (a[j] > C) {
        a[j] = C, a[i] = C + diff;
      }
    } else {
      double quad = 2.0 - 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) a[i] = C, a[j] = sum - C;
      } else if (a[j] < 0) {
        a[j] = 0, a[i] = sum;
      }
      if (sum > C) {
        if (a[j] > C) a[j] = C, a[i] = sum - C;
      } else if (a[i] < 0) {
        a[i] = 0, a[j] = sum;
      }
    }
    const double di = a[i] - old_i, dj = a[j] - old_j;
    for (std::size_t t = 0; t < n; ++t) {
      const double kit = Ki[t % l], kjt = Kj[t % l];
      G[t] += static_cast<double>(y[i] * y[t]) * kit * di + static_cast<double>(y[j] * y[t]) * kjt * dj;
    }
    if (params.trace) {
      st.objective_trace.push_back(objective());
      double eq = 0, box = 0;
      for (std::size_t t = 0; t < n; ++t) {
        eq += y[t] * a[t];
        box = std::max({box, -a[t], a[t] - C});
      }
      st.equality_trace.push_back(eq);
      st.box_violation_trace.push_back(box);
    }
  }

  // Offset as in libsvm: mean over free variables, else midpoint of the bounds.
  double ub = INFINITY, lb = -INFINITY, sum_free = 0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (a[t] >= C) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (a[t] <= 0) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  SvrModel model;
  model.gamma = gamma;
  model.C = C;
  model.epsilon = params.epsilon;
  model.bias = -rho;
  const std::size_t d = X.dim(1);
  std::vector<double> sv;
  for (std::size_t i = 0; i < l; ++i) {
    const double c = a[i] - a[i + l];
    if (c == 0.0) continue;
    model.coef.push_back(c);
    sv.insert(sv.end(), X.data().begin() + static_cast<std::ptrdiff_t>(i * d),
              X.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  model.support_vectors = Tensor({model.coef.size(), d}, std::move(sv));

  st.iterations = iter;
  st.kkt_violation = std::max(gap, 0.0);
  st.objective = objective();
  dual.alpha = std::move(a);
  dual.rho = rho;
  return model;
}

SvrModel svr_fit(const Tensor& X, std::span<const double> y, const SvrParams& params, SvrFitInfo* info) {
  SvrDual dual;
  return svr_fit_dual(X, y, params, dual, info);
}

Tensor MultiSvr::predict(const Tensor& X) const {
  Tensor out({X.dim(0), models.size()});
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto col = models[k].predict(X);
    for (std::size_t i = 0; i < col.size(); ++i) out[i * models.size() + k] = col[i];
  }
  return out;
}

MultiSvr svr_fit_multi(const Tensor& X, const Tensor& Y, const SvrParams& params, std::size_t jobs) {
  if (Y.rank() != 2 || Y.dim(0) != X.dim(0)) throw ShapeError("svr: Y must be [N,q] aligned with X");
  const std::size_t q = Y.dim(1), n = Y.dim(0);
  MultiSvr out;
  out.models.resize(q);
  parallel_for(q, jobs, [&](std::size_t k) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = Y[i * q + k];
    out.models[k] = svr_fit(X, col, params);
  });
  return out;
}

SvrGridResult svr_grid_search(const Tensor& X_train, const Tensor& Y_train, const Tensor& X_val, const Tensor& Y_val,
                              const std::vector<double>& C_grid, const std::vector<double>& epsilon_grid,
                              std::vector<double> gamma_grid, const SvrParams& base, std::size_t jobs) {
  if (C_grid.empty() || epsilon_grid.empty()) throw std::invalid_argument("svr grid: C and epsilon grids must be nonempty");
  if (gamma_grid.empty()) gamma_grid.push_back(default_gamma(X_train));
  SvrGridResult res;
  for (double c : C_grid)
    for (double e : epsilon_grid)
      for (double g : gamma_grid) res.points.push_back({c, e, g, 0, {}, 0});

  parallel_for(res.points.size(), jobs, [&](std::size_t k) {
    SvrGridPoint& pt = res.points[k];
    SvrParams p = base;
    p.C = pt.C;
    p.epsilon = pt.epsilon;
    p.gamma = pt.gamma;
    const auto t0 = std::chrono::steady_clock::now();
    const MultiSvr m = svr_fit_multi(X_train, Y_train, p);
    pt.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Tensor pred = m.predict(X_val);
    const std::size_t q = Y_val.dim(1), n = Y_val.dim(0);
    pt.per_output_mse.assign(q, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < q; ++j) {
        const double d = pred[i * q + j] - Y_val[i * q + j];
        pt.per_output_mse[j] += d * d / static_cast<double>(n);
      }
    pt.mse = std::accumulate(pt.per_output_mse.begin(), pt.per_output_mse.end(), 0.0) / static_cast<double>(q);
  });

  auto better = [](const SvrGridPoint& a, const SvrGridPoint& b) {
    if (a.mse != b.mse) return a.mse < b.mse;
    if (a.C != b.C) return a.C < b.C;
    if (a.epsilon != b.epsilon) return a.epsilon > b.epsilon;
    return a.gamma < b.gamma;
  };
  res.best = *std::min_element(res.points.begin(), res.points.end(), better);
  return res;
}

Tensor flatten_windows(const Tensor& X) {
  if (X.rank() != 3) throw ShapeError("flatten_windows: expects [N,p,m], got " + shape_str(X.shape()));
  return X.reshaped({X.dim(0), X.dim(1) * X.dim(2)});
}

}  // namespace trafficdtl
