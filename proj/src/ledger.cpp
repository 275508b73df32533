#include "trafficdtl/ledger.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "trafficdtl/error.hpp"

namespace trafficdtl {

std::string RunRecord::key() const {
  return kind + "|" + site + "|" + teacher_site + "|" + arch + "|" + std::to_string(p) + "|" + std::to_string(dn) +
         "|" + std::to_string(seed) + "|" + mask + "|" + config_hash;
}

nlohmann::json RunRecord::to_json() const {
  return {{"kind", kind},
          {"site", site},
          {"teacher_site", teacher_site},
          {"arch", arch},
          {"p", p},
          {"dn", dn},
          {"seed", seed},
          {"mask", mask},
          {"mse", mse},
          {"per_output_mse", per_output_mse},
          {"epochs_used", epochs_used},
          {"wall_time", wall_time},
          {"param_count", param_count},
          {"trainable_param_count", trainable_param_count},
          {"config_hash", config_hash},
          {"extra", extra}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.kind = j.at("kind").get<std::string>();
  r.site = j.value("site", "");
  r.teacher_site = j.value("teacher_site", "");
  r.arch = j.at("arch").get<std::string>();
  r.p = j.value("p", std::size_t{0});
  r.dn = j.value("dn", std::size_t{0});
  r.seed = j.value("seed", std::uint64_t{0});
  r.mask = j.value("mask", "");
  r.mse = j.at("mse").get<double>();
  r.per_output_mse = j.value("per_output_mse", std::vector<double>{});
  r.epochs_used = j.value("epochs_used", std::size_t{0});
  if (!j.contains("wall_time") || !j["wall_time"].is_number()) {
    throw ConfigError("run record '" + r.key() + "' has no numeric wall_time");
  }
  r.wall_time = j["wall_time"].get<double>();
  r.param_count = j.value("param_count", std::size_t{0});
  r.trainable_param_count = j.value("trainable_param_count", std::size_t{0});
  r.config_hash = j.value("config_hash", "");
  r.extra = j.value("extra", nlohmann::json::object());
  return r;
}

RunLedger::RunLedger(std::filesystem::path dir) : path_(std::move(dir) / "runs.jsonl") {
  std::filesystem::create_directories(path_.parent_path());
}

void RunLedger::append(const RunRecord& r) {
  const std::string line = r.to_json().dump() + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream os(path_, std::ios::app);
  if (!os) throw std::runtime_error("cannot append to ledger '" + path_.string() + "'");
  os << line;
  os.flush();
}

namespace {
std::vector<RunRecord> read_jsonl(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  std::ifstream is(path);
  if (!is) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(RunRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("ledger '" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}
}  // namespace

std::vector<RunRecord> RunLedger::load() const {
  std::lock_guard lock(mutex_);
  return read_jsonl(path_);
}

std::optional<RunRecord> RunLedger::find(const std::string& key) const {
  for (auto& r : load())
    if (r.key() == key) return r;
  return std::nullopt;
}

std::vector<RunRecord> read_ledger(const std::filesystem::path& dir) { return read_jsonl(dir / "runs.jsonl"); }

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<ReportRow> summarize(const std::vector<RunRecord>& records) {
  using Cell = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
  struct Acc {
    double sum = 0;
    std::size_t n = 0;
  };
  // Transfer runs are first averaged per mask, then the best mask wins the cell.
  std::map<Cell, std::map<std::string, Acc>> cells;
  for (const RunRecord& r : records) {
    if (r.kind == "teacher") continue;
    std::string mode = r.kind;
    if (r.kind == "transfer" && !r.teacher_site.empty()) mode = "transfer_from_" + r.teacher_site;
    auto& acc = cells[{r.site, mode, r.arch, r.p, r.dn}][r.mask];
    acc.sum += r.mse;
    ++acc.n;
  }
  std::vector<ReportRow> rows;
  for (const auto& [cell, masks] : cells) {
    ReportRow row{std::get<0>(cell), std::get<1>(cell), std::get<2>(cell), std::get<3>(cell), std::get<4>(cell),
                  INFINITY, 0, false, ""};
    for (const auto& [mask, acc] : masks) {
      const double mean = acc.sum / static_cast<double>(acc.n);
      if (mean < row.mse) row.mse = mean, row.runs = acc.n, row.mask = mask;
    }
    rows.push_back(row);
  }
  std::map<std::tuple<std::string, std::size_t, std::size_t>, double> best;
  for (const auto& r : rows) {
    auto [it, fresh] = best.try_emplace({r.site, r.p, r.dn}, r.mse);
    if (!fresh) it->second = std::min(it->second, r.mse);
  }
  for (auto& r : rows) r.best = r.mse == best.at({r.site, r.p, r.dn});
  return rows;
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& out_dir, const std::vector<ReportRow>& rows) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  char buf[64];
  {
    const auto path = out_dir / "report.csv";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << "site,mode,arch,p,dn,mse,runs,best,mask\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.6g", r.mse);
      os << r.site << ',' << r.mode << ',' << r.arch << ',' << r.p << ',' << r.dn << ',' << buf << ',' << r.runs << ','
         << (r.best ? 1 : 0) << ',' << r.mask << '\n';
    }
    written.push_back(path);
  }
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const ReportRow*>> groups;
  for (const auto& r : rows) groups[{r.site, r.mode, r.arch}].push_back(&r);
  for (const auto& [g, members] : groups) {
    std::set<std::size_t> ps, dns;
    for (const auto* r : members) ps.insert(r->p), dns.insert(r->dn);
    const auto path = out_dir / ("grid_" + std::get<0>(g) + "_" + std::get<1>(g) + "_" + std::get<2>(g) + ".csv");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << "p";
    for (auto dn : dns) os << ",dn=" << dn;
    os << '\n';
    for (auto p : ps) {
      os << p;
      for (auto dn : dns) {
        os << ',';
        for (const auto* r : members)
          if (r->p == p && r->dn == dn) {
            std::snprintf(buf, sizeof(buf), "%.6g", r->mse);
            os << buf;
          }
      }
      os << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace trafficdtl
