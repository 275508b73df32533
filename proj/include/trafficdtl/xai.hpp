#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "trafficdtl/model.hpp"

namespace trafficdtl {

/// d output[i] / d x for one window x [p,m] in canonical column order.
Tensor sensitivity_map(const ModelGraph& model, const Tensor& x, std::size_t output);
/// Batched form: windows [B,p,m] -> maps [B,p,m].
Tensor sensitivity_maps(const ModelGraph& model, const Tensor& windows, std::size_t output);

struct SmoothGradOptions {
  std::size_t samples = 50;
  double sigma = 0.1;  // noise std as a fraction of the input range width (2)
  std::uint64_t seed = 0;
};

/// Mean sensitivity over Gaussian-perturbed copies of x. sigma == 0 returns
/// the plain sensitivity map.
Tensor smoothgrad(const ModelGraph& model, const Tensor& x, std::size_t output, const SmoothGradOptions& opt = {});

struct LrpLayerStat {
  std::string layer;
  double relevance_out = 0;  // relevance arriving at the layer output
  double relevance_in = 0;   // relevance passed to the layer input
  double bias = 0;           // share of the bias unit (index 0 of the denominator sum)
  double stabilizer = 0;     // lost to the eps term
  double absorbed = 0;       // bias + stabilizer
};

struct LrpResult {
  Tensor map;  // [p,m], canonical column order
  double output = 0;
  std::vector<LrpLayerStat> layers;  // in backward order
};

/// Layer-wise relevance propagation with the z-rule: each input receives
/// a_j w_jk / (z_k + eps sign(z_k)) of output k's relevance, where z_k
/// includes the bias, eps = 1e-9 and sign(0) = 0. Nonlinearities and dropout
/// pass relevance through unchanged, average pooling splits it equally, and
/// GRU gates act as fixed weights. Starts from R = output value.
LrpResult lrp(const ModelGraph& model, const Tensor& x, std::size_t output);

enum class AttributionMethod { smoothgrad, lrp };
const char* method_name(AttributionMethod m);
AttributionMethod parse_method(const std::string& name);

struct AttributionMap {
  AttributionMethod method = AttributionMethod::smoothgrad;
  std::size_t output = 0;
  Tensor grid;    // [p,m] mean of squared maps
  Tensor scaled;  // grid min-max scaled to [0,1]
  std::size_t samples = 0;
  nlohmann::json metadata;
};

/// grid[r,c] = mean over maps of map[r,c]^2.
AttributionMap aggregate_maps(const std::vector<Tensor>& maps);

struct AttributionOptions {
  std::size_t stride = 1;  // use every stride-th window
  SmoothGradOptions smoothgrad;
};

/// Attributions of every (strided) window for one output, aggregated.
AttributionMap attribute_dataset(const ModelGraph& model, const Tensor& windows, AttributionMethod method,
                                 std::size_t output, const AttributionOptions& opt = {});

/// Mean of the last floor(p/3) grid rows and of the first floor(p/3) rows.
std::pair<double, double> latest_vs_earliest(const Tensor& grid);

/// One CSV grid per map (rows = time step, columns = input features) and an
/// index.json describing them. Returns the index path.
std::filesystem::path export_heatmaps(const std::filesystem::path& dir, const std::vector<AttributionMap>& maps);

}  // namespace trafficdtl
