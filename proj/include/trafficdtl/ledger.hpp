#pragma once

#include <filesystem>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace trafficdtl {

/// One training or fitting run.
struct RunRecord {
  std::string kind;          // standalone, teacher, transfer, svr, persistence
  std::string site;
  std::string teacher_site;  // transfer only
  std::string arch;          // rnn, cnn, svr, persistence
  std::size_t p = 0, dn = 0;
  std::uint64_t seed = 0;
  std::string mask;          // transfer only, e.g. "FTT"
  double mse = 0;
  std::vector<double> per_output_mse;
  std::size_t epochs_used = 0;
  double wall_time = 0;
  std::size_t param_count = 0;
  std::size_t trainable_param_count = 0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();

  /// Identity used for resume: everything except the measured results.
  std::string key() const;
  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Append-only JSON-lines file `<dir>/runs.jsonl`. Appends are serialized, so
/// one ledger can be shared by worker threads.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path dir);
  const std::filesystem::path& path() const noexcept { return path_; }

  void append(const RunRecord& r);
  std::vector<RunRecord> load() const;
  /// Record with this key already written, if any.
  std::optional<RunRecord> find(const std::string& key) const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

/// Reads every record of a ledger directory; a missing file is an empty ledger.
std::vector<RunRecord> read_ledger(const std::filesystem::path& dir);

/// FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Seed-averaged MSE of one (site, mode, arch, p, dn) cell.
struct ReportRow {
  std::string site, mode, arch;
  std::size_t p = 0, dn = 0;
  double mse = 0;
  std::size_t runs = 0;
  bool best = false;  // lowest MSE among rows of the same (site, p, dn)
  std::string mask;   // transfer rows: the best freeze mask
};

/// Groups records by cell and averages over seeds. Transfer cells keep the
/// best mask (lowest seed-averaged MSE). Rows are sorted by site, mode, arch, p, dn.
std::vector<ReportRow> summarize(const std::vector<RunRecord>& records);

/// Writes report.csv (long form with the best flag) and one grid_<site>_<mode>_<arch>.csv
/// per group with p rows and dn columns. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& out_dir, const std::vector<ReportRow>& rows);

}  // namespace trafficdtl
