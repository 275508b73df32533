#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "trafficdtl/dataset.hpp"
#include "trafficdtl/energy.hpp"
#include "trafficdtl/ledger.hpp"
#include "trafficdtl/training.hpp"

namespace trafficdtl {

/// Everything a pipeline run needs. Loaded from one JSON file; CLI flags
/// override individual fields afterwards.
struct ExperimentConfig {
  std::vector<std::string> sites{"PS", "EB", "LC"};  // profile names or CSV paths
  std::vector<std::size_t> p_grid{10, 15, 20};
  std::vector<std::size_t> dn_grid{0, 4, 9, 14};
  std::vector<std::string> archs{"rnn", "cnn"};
  std::uint64_t seed = 1;
  std::size_t runs = 3;  // seeds per cell
  std::map<std::string, double> train_days{{"PS", 21}, {"EB", 6}, {"LC", 6}};
  double default_train_days = 6;

  TrainConfig train = [] {
    TrainConfig t;
    t.batch_size = 0;  // per-architecture default
    return t;
  }();
  std::size_t train_stride = 1;   // keep every n-th training window
  std::size_t teacher_stride = 1;
  std::size_t teacher_validation_stride = 1;
  std::string teacher_site = "PS";
  std::string teacher_weights;    // optional pre-trained teacher (weights stem)

  std::vector<double> svr_C{0.1, 1, 10};
  std::vector<double> svr_epsilon{0.01, 0.05, 0.1};
  std::vector<double> svr_gamma;  // empty: default gamma only
  std::size_t svr_train_stride = 4;
  double svr_tol = 1e-3;

  std::vector<std::string> xai_methods{"smoothgrad", "lrp"};
  std::size_t xai_stride = 1;
  std::size_t xai_noise_samples = 50;
  double xai_sigma = 0.1;

  PowerModel power;
  std::filesystem::path out_dir = "out";
  std::size_t jobs = 1;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
  double train_days_for(const std::string& site) const;
  /// Seed of the k-th replicate run.
  std::uint64_t run_seed(std::size_t k) const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Display name of a site entry: the profile name or the CSV file stem.
std::string site_name(const std::string& site);

/// CSV path when the entry is an existing file; else <out>/data/<name>.csv when
/// present; else the shipped profile generated with the config seed.
SiteSeries load_site(const ExperimentConfig& cfg, const std::string& site);

/// Writes <out>/data/<name>.csv for every generated site. Returns the files.
std::vector<std::filesystem::path> run_generate(const ExperimentConfig& cfg);
/// Stand-alone grid plus the persistence baseline; skips runs already in the ledger.
std::size_t run_train(const ExperimentConfig& cfg);
/// Teacher per (arch, p, dn) on the teacher site, then the 8-mask sweep on every other site.
std::size_t run_transfer(const ExperimentConfig& cfg);
std::size_t run_svr(const ExperimentConfig& cfg);
/// Heatmaps of the first replicate of every trained stand-alone model in the grid.
std::vector<std::filesystem::path> run_explain(const ExperimentConfig& cfg);
std::filesystem::path run_energy(const ExperimentConfig& cfg);
std::vector<std::filesystem::path> run_report(const ExperimentConfig& cfg);

std::filesystem::path model_stem(const ExperimentConfig& cfg, const std::string& site, const std::string& arch,
                                 std::size_t p, std::size_t dn, std::size_t run);

}  // namespace trafficdtl
