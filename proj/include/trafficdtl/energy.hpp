#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "trafficdtl/ledger.hpp"

namespace trafficdtl {

struct PowerModel {
  double core_power_w = 250.0;
  double memory_power_w = 69.66;
  double usage = 1.0;
  double pue = 1.67;

  static PowerModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EnergyReport {
  std::string arch, site, mode;
  double param_count = 0;            // averaged when several runs are combined
  double trainable_param_count = 0;
  double epochs_used = 0;
  double wall_time = 0;              // seconds
  PowerModel power;
  double energy_wh = 0;
  std::optional<double> savings_percent;
  std::size_t runs = 1;
};

/// wall_time / 3600 * (core_power * usage + memory_power) * pue.
double energy_wh(double wall_time, const PowerModel& power);
/// 100 * (1 - energy / baseline).
double savings_percent(double baseline_wh, double energy);
/// Two-decimal rendering used in tables, e.g. "94.95".
std::string format_percent(double percent);

/// Throws std::invalid_argument for a negative or non-finite wall time.
EnergyReport account(const RunRecord& run, const PowerModel& power);
/// Mean counts, epochs and wall time over runs (e.g. across dn), then energy.
EnergyReport account(const std::vector<RunRecord>& runs, const PowerModel& power);

struct EnergyComparison {
  EnergyReport standalone, dtl;
  double savings_percent = 0;
};

/// Same architecture and site required; fills dtl.savings_percent.
EnergyComparison compare(const EnergyReport& standalone, const EnergyReport& dtl);

/// arch,site,mode,params,trainable_params,epochs,wall_time_s,energy_wh,saved_percent
void write_energy_csv(const std::filesystem::path& path, const std::vector<EnergyComparison>& rows);

/// Groups a ledger by (arch, site): standalone runs against transfer runs.
std::vector<EnergyComparison> energy_table(const std::vector<RunRecord>& records, const PowerModel& power);

}  // namespace trafficdtl
