#pragma once

#include <cstdint>
#include <vector>

#include "trafficdtl/tensor.hpp"

namespace trafficdtl {

struct SvrParams {
  double C = 1.0;
  double epsilon = 0.1;
  double gamma = 0.0;  // <= 0 selects 1 / (d * var(X))
  double tol = 1e-3;
  std::size_t max_iterations = 10'000'000;
  std::size_t cache_mb = 256;
  std::uint64_t seed = 0;  // order in which ties between working-set candidates are broken
  bool trace = false;      // record objective and feasibility per iteration
};

struct SvrModel {
  Tensor support_vectors;  // [s, d]
  std::vector<double> coef;  // alpha - alpha*, each in [-C, C]
  double bias = 0;
  double gamma = 0, C = 0, epsilon = 0;

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const Tensor& X) const;  // [N, d] -> N
  std::size_t support_count() const noexcept { return coef.size(); }
};

struct SvrFitInfo {
  std::size_t iterations = 0;
  double kkt_violation = 0;  // max violating-pair gap at exit
  double objective = 0;      // dual objective 1/2 a'Qa + p'a
  std::vector<double> objective_trace;
  std::vector<double> equality_trace;  // sum(alpha - alpha*) per iteration
  std::vector<double> box_violation_trace;
};

/// 1 / (d var(X)) over all entries of X [N, d].
double default_gamma(const Tensor& X);

/// Epsilon-insensitive RBF regression via SMO on the 2N-variable dual with
/// second-order working-set selection. Throws ConvergenceError when
/// max_iterations is reached before the KKT gap drops below tol.
SvrModel svr_fit(const Tensor& X, std::span<const double> y, const SvrParams& params, SvrFitInfo* info = nullptr);

/// Dual variables (alpha then alpha*) of the last fit, for oracle comparisons.
struct SvrDual {
  std::vector<double> alpha;  // size 2N
  double rho = 0;
};
SvrModel svr_fit_dual(const Tensor& X, std::span<const double> y, const SvrParams& params, SvrDual& dual,
                      SvrFitInfo* info = nullptr);

/// q independent regressors sharing one hyperparameter triple.
struct MultiSvr {
  std::vector<SvrModel> models;
  Tensor predict(const Tensor& X) const;  // [N, d] -> [N, q]
};
MultiSvr svr_fit_multi(const Tensor& X, const Tensor& Y, const SvrParams& params, std::size_t jobs = 1);

struct SvrGridPoint {
  double C = 0, epsilon = 0, gamma = 0;
  double mse = 0;
  std::vector<double> per_output_mse;
  double fit_seconds = 0;
};

struct SvrGridResult {
  std::vector<SvrGridPoint> points;  // in evaluation order
  SvrGridPoint best;
};

/// Exhaustive search by validation MSE averaged over outputs. Ties prefer
/// smaller C, then larger epsilon, then smaller gamma. Empty gamma grid uses
/// the default gamma.
SvrGridResult svr_grid_search(const Tensor& X_train, const Tensor& Y_train, const Tensor& X_val, const Tensor& Y_val,
                              const std::vector<double>& C_grid, const std::vector<double>& epsilon_grid,
                              std::vector<double> gamma_grid, const SvrParams& base = {}, std::size_t jobs = 1);

/// Flattens windows [N, p, m] to [N, p*m].
Tensor flatten_windows(const Tensor& X);

}  // namespace trafficdtl
