#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trafficdtl/tensor.hpp"

namespace trafficdtl {

inline constexpr std::int64_t kBucketSeconds = 120;
inline constexpr std::int64_t kBucketsPerDay = 86400 / kBucketSeconds;
/// LTE subframes (1 ms) in one two-minute bucket.
inline constexpr double kSubframesPerBucket = 120000.0;
inline constexpr double kBandwidthRb = 100.0;

/// Canonical input columns (m = 5) and target columns (q = 5).
inline const std::array<std::string, 5> kInputColumns{"rnti_count", "rb_down", "rb_up", "mcs_down", "mcs_up"};
inline const std::array<std::string, 5> kTargetColumns{"rnti_count", "rb_down", "rb_up", "thr_down", "thr_up"};

/// One two-minute bucket of control-channel statistics.
struct DciAggregate {
  std::int64_t timestamp = 0;  // bucket start, epoch seconds
  double rnti_count = 0;
  double mcs_down = 0, mcs_up = 0;  // mean MCS index, [0,31]
  double rb_down = 0, rb_up = 0;    // percent of available RBs, [0,100]
  double thr_down = 0, thr_up = 0;  // transport-block bits in the bucket
};

/// One decoded DCI message. Absent fields are decode failures.
struct DciRecord {
  double timestamp = 0;  // epoch seconds, millisecond resolution
  std::optional<std::int64_t> rnti;
  std::optional<double> mcs_down, mcs_up;
  std::optional<double> rb_down, rb_up;  // RBs assigned in the subframe
};

/// Groups records into two-minute buckets. Buckets where any variable has no
/// valid value are dropped. Throws std::invalid_argument on decreasing timestamps.
std::vector<DciAggregate> downsample(std::span<const DciRecord> records, double bandwidth_rb = kBandwidthRb);

// --- transport block size approximation -----------------------------------------

struct McsEntry {
  int modulation_bits;  // bits per symbol: 2, 4 or 6
  double code_rate;
};

/// MCS index -> (modulation order, code rate). The default table derives each
/// code rate from the one-PRB transport block size of the MCS's TBS index
/// divided by 168 resource elements times the modulation order.
class McsTable {
 public:
  McsTable();
  explicit McsTable(std::array<McsEntry, 32> rows);
  /// CSV with header `mcs,modulation_bits,code_rate` and 32 rows.
  static McsTable load_csv(const std::filesystem::path& path);

  const McsEntry& row(int mcs) const { return rows_.at(static_cast<std::size_t>(mcs)); }
  /// bits_per_symbol x code_rate, linearly interpolated for fractional MCS.
  double efficiency(double mcs) const;

 private:
  std::array<McsEntry, 32> rows_;
};

const McsTable& default_mcs_table();

/// Approximate TBS of one subframe: n_rb x 12 x 14 x bits_per_symbol x code_rate.
double transport_block_bits(double mcs, double n_rb, const McsTable& table = default_mcs_table());

struct Throughput {
  double down = 0, up = 0;
};

/// Cumulative TBS over a bucket's subframes; rb percentages scale bandwidth_rb.
Throughput derive_throughput(const DciAggregate& agg, double bandwidth_rb = kBandwidthRb,
                             double subframes = kSubframesPerBucket, const McsTable& table = default_mcs_table());

/// Fills thr_down/thr_up for every row.
void derive_throughput(std::vector<DciAggregate>& rows, double bandwidth_rb = kBandwidthRb);

// --- series & normalization ---------------------------------------------------

/// Time-ordered, cleaned series split into model inputs and targets.
struct SiteSeries {
  std::vector<std::int64_t> timestamps;
  Tensor inputs;   // [T, 5] in kInputColumns order
  Tensor targets;  // [T, 5] in kTargetColumns order
};

SiteSeries to_series(std::span<const DciAggregate> rows);

struct ColumnRange {
  std::string name;
  double min = 0, max = 0;
};

using NormParams = std::vector<ColumnRange>;

/// Per-column min/max over the first `rows` rows of series [T, k].
/// Throws std::invalid_argument naming any constant column.
NormParams fit_normalization(const Tensor& series, std::span<const std::string> names, std::size_t rows);
/// v -> 2 (v - min) / (max - min) - 1, clamped to [-1, 1].
double normalize_value(double v, const ColumnRange& r);
double denormalize_value(double v, const ColumnRange& r);
Tensor normalize(const Tensor& series, const NormParams& params);
Tensor denormalize(const Tensor& series, const NormParams& params);

// --- windowing ----------------------------------------------------------------

struct WindowedDataset {
  Tensor X;  // [N, p, m]
  Tensor Y;  // [N, q]
  std::size_t p = 0;
  std::size_t dn = 0;
  NormParams input_norm;
  NormParams target_norm;
  std::vector<std::size_t> last_row;    // series row of each window's last input
  std::vector<std::size_t> target_row;  // series row of each window's target
  std::vector<std::int64_t> target_time;

  std::size_t size() const noexcept { return last_row.size(); }
  /// Subset by window indices, preserving order.
  WindowedDataset select(std::span<const std::size_t> idx) const;
};

/// Sliding windows of p rows, stride one. Window n covers rows [n, n+p-1] and
/// targets row n+p+dn. Throws std::invalid_argument when T < p + dn + 1.
WindowedDataset window(const Tensor& series, const Tensor& targets, std::size_t p, std::size_t dn);

/// As above, but windows whose rows (inputs through target) are not consecutive
/// buckets are discarded, so no window straddles a removed bucket.
WindowedDataset window(const Tensor& series, const Tensor& targets, std::span<const std::int64_t> timestamps,
                       std::size_t p, std::size_t dn, std::int64_t bucket_seconds = kBucketSeconds);

/// m x m Pearson correlation matrix of series [T, m].
Tensor pearson_matrix(const Tensor& series);

// --- files --------------------------------------------------------------------

/// Reads either the aggregate schema `timestamp,rnti_count,mcs_down,mcs_up,rb_down,rb_up`
/// or the per-record schema `timestamp,rnti,mcs_down,mcs_up,rb_down,rb_up`
/// (which is downsampled). Rows with missing fields are dropped; throughput is derived.
std::vector<DciAggregate> read_dci_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const DciAggregate> rows);
std::vector<DciRecord> read_record_csv(const std::filesystem::path& path);

/// Binary tensors (`<stem>.bin`) plus a JSON sidecar (`<stem>.json`) with p, dn,
/// normalization ranges and column order.
void save_dataset(const std::filesystem::path& stem, const WindowedDataset& ds);
WindowedDataset load_dataset(const std::filesystem::path& stem);

}  // namespace trafficdtl
