#include "trafficdtl/energy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

PowerModel PowerModel::from_json(const nlohmann::json& j) {
  PowerModel p;
  try {
    p.core_power_w = j.value("core_power_w", p.core_power_w);
    p.memory_power_w = j.value("memory_power_w", p.memory_power_w);
    p.usage = j.value("usage", p.usage);
    p.pue = j.value("pue", p.pue);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("power model: ") + e.what());
  }
  if (p.core_power_w < 0 || p.memory_power_w < 0 || p.usage < 0 || p.usage > 1 || p.pue < 1) {
    throw ConfigError("power model: powers must be >= 0, usage in [0,1], pue >= 1");
  }
  return p;
}

nlohmann::json PowerModel::to_json() const {
  return {{"core_power_w", core_power_w}, {"memory_power_w", memory_power_w}, {"usage", usage}, {"pue", pue}};
}

double energy_wh(double wall_time, const PowerModel& power) {
  return wall_time / 3600.0 * (power.core_power_w * power.usage + power.memory_power_w) * power.pue;
}

double savings_percent(double baseline_wh, double energy) {
  if (!(baseline_wh > 0)) throw std::invalid_argument("savings: baseline energy must be positive");
  return 100.0 * (1.0 - energy / baseline_wh);
}

EnergyReport account(const RunRecord& run, const PowerModel& power) { return account(std::vector<RunRecord>{run}, power); }

EnergyReport account(const std::vector<RunRecord>& runs, const PowerModel& power) {
  if (runs.empty()) throw std::invalid_argument("energy: no runs to account");
  EnergyReport rep;
  rep.arch = runs.front().arch;
  rep.site = runs.front().site;
  rep.mode = runs.front().kind;
  rep.power = power;
  rep.runs = runs.size();
  for (const RunRecord& r : runs) {
    if (!std::isfinite(r.wall_time) || r.wall_time < 0) {
      throw std::invalid_argument("energy: run '" + r.key() + "' has invalid wall time " + std::to_string(r.wall_time));
    }
    rep.param_count += static_cast<double>(r.param_count);
    rep.trainable_param_count += static_cast<double>(r.trainable_param_count);
    rep.epochs_used += static_cast<double>(r.epochs_used);
    rep.wall_time += r.wall_time;
  }
  const double n = static_cast<double>(runs.size());
  rep.param_count /= n;
  rep.trainable_param_count /= n;
  rep.epochs_used /= n;
  rep.wall_time /= n;
  rep.energy_wh = energy_wh(rep.wall_time, power);
  return rep;
}

EnergyComparison compare(const EnergyReport& standalone, const EnergyReport& dtl) {
  if (standalone.arch != dtl.arch) {
    throw std::invalid_argument("energy compare: architecture '" + standalone.arch + "' vs '" + dtl.arch + "'");
  }
  if (standalone.site != dtl.site) {
    throw std::invalid_argument("energy compare: dataset '" + standalone.site + "' vs '" + dtl.site + "'");
  }
  EnergyComparison c{standalone, dtl, savings_percent(standalone.energy_wh, dtl.energy_wh)};
  c.dtl.savings_percent = c.savings_percent;
  return c;
}

void write_energy_csv(const std::filesystem::path& path, const std::vector<EnergyComparison>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << "arch,site,mode,params,trainable_params,epochs,wall_time_s,energy_wh,saved_percent\n";
  char buf[256];
  auto line = [&](const EnergyReport& r, const std::string& saved) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.2f,%.2f,%.2f,%.3f,%.6f,", r.arch.c_str(), r.site.c_str(), r.mode.c_str(),
                  r.param_count, r.trainable_param_count, r.epochs_used, r.wall_time, r.energy_wh);
    os << buf << saved << '\n';
  };
  for (const auto& c : rows) {
    line(c.standalone, "");
    std::snprintf(buf, sizeof(buf), "%s", format_percent(c.savings_percent).c_str());
    line(c.dtl, buf);
  }
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", percent);
  return buf;
}

std::vector<EnergyComparison> energy_table(const std::vector<RunRecord>& records, const PowerModel& power) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<RunRecord>, std::vector<RunRecord>>> groups;
  for (const RunRecord& r : records) {
    if (r.kind == "standalone") groups[{r.arch, r.site}].first.push_back(r);
    if (r.kind == "transfer") groups[{r.arch, r.site}].second.push_back(r);
  }
  std::vector<EnergyComparison> out;
  for (const auto& [key, g] : groups) {
    if (g.first.empty() || g.second.empty()) continue;
    const EnergyReport base = account(g.first, power);
    if (!(base.energy_wh > 0)) continue;
    out.push_back(compare(base, account(g.second, power)));
  }
  return out;
}

}  // namespace trafficdtl
