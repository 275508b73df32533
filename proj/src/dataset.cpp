#include "trafficdtl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "trafficdtl/error.hpp"
#include "trafficdtl/io.hpp"

namespace trafficdtl {

// --- downsampling ---------------------------------------------------------------

std::vector<DciAggregate> downsample(std::span<const DciRecord> records, double bandwidth_rb) {
  struct Bucket {
    std::set<std::int64_t> rntis;
    std::set<std::int64_t> subframes;
    double mcs_down = 0, mcs_up = 0, rb_down = 0, rb_up = 0;
    std::size_t n_mcs_down = 0, n_mcs_up = 0, n_rb_down = 0, n_rb_up = 0;
  };
  std::vector<DciAggregate> out;
  Bucket cur;
  std::int64_t cur_start = 0;
  bool open = false;
  double prev_ts = -INFINITY;

  auto flush = [&] {
    if (!open) return;
    if (!cur.rntis.empty() && cur.n_mcs_down && cur.n_mcs_up && cur.n_rb_down && cur.n_rb_up) {
      DciAggregate a;
      a.timestamp = cur_start;
      a.rnti_count = static_cast<double>(cur.rntis.size());
      a.mcs_down = cur.mcs_down / static_cast<double>(cur.n_mcs_down);
      a.mcs_up = cur.mcs_up / static_cast<double>(cur.n_mcs_up);
      const double available = static_cast<double>(cur.subframes.size()) * bandwidth_rb;
      a.rb_down = std::min(100.0, 100.0 * cur.rb_down / available);
      a.rb_up = std::min(100.0, 100.0 * cur.rb_up / available);
      const Throughput thr = derive_throughput(a, bandwidth_rb);
      a.thr_down = thr.down;
      a.thr_up = thr.up;
      out.push_back(a);
    }
    cur = Bucket{};
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const DciRecord& r = records[i];
    if (r.timestamp < prev_ts) {
      throw std::invalid_argument("downsample: timestamps not ordered at record " + std::to_string(i) + " (" +
                                  std::to_string(r.timestamp) + " after " + std::to_string(prev_ts) + ")");
    }
    prev_ts = r.timestamp;
    const auto start = static_cast<std::int64_t>(std::floor(r.timestamp / kBucketSeconds)) * kBucketSeconds;
    if (!open || start != cur_start) {
      flush();
      cur_start = start;
      open = true;
    }
    cur.subframes.insert(std::llround(r.timestamp * 1000.0));
    if (r.rnti) cur.rntis.insert(*r.rnti);
    if (r.mcs_down) cur.mcs_down += *r.mcs_down, ++cur.n_mcs_down;
    if (r.mcs_up) cur.mcs_up += *r.mcs_up, ++cur.n_mcs_up;
    if (r.rb_down) cur.rb_down += *r.rb_down, ++cur.n_rb_down;
    if (r.rb_up) cur.rb_up += *r.rb_up, ++cur.n_rb_up;
  }
  flush();
  return out;
}

// --- TBS approximation ----------------------------------------------------------

namespace {

// Transport block size in bits for one PRB, indexed by TBS index 0..26.
constexpr std::array<double, 27> kTbsOnePrb{16,  24,  32,  40,  56,  72,  88,  104, 120, 136, 144, 176, 208, 224,
                                            256, 280, 328, 336, 376, 408, 440, 488, 520, 552, 584, 616, 712};

std::array<McsEntry, 32> default_rows() {
  std::array<McsEntry, 32> rows{};
  for (int mcs = 0; mcs < 32; ++mcs) {
    const int m = std::min(mcs, 28);  // 29..31 signal retransmissions; reuse the top entry
    int qm = 0, itbs = 0;
    if (m <= 9) qm = 2, itbs = m;
    else if (m <= 16) qm = 4, itbs = m - 1;
    else qm = 6, itbs = m - 2;
    rows[static_cast<std::size_t>(mcs)] = {qm, kTbsOnePrb[static_cast<std::size_t>(itbs)] / (168.0 * qm)};
  }
  return rows;
}

}  // namespace

McsTable::McsTable() : rows_(default_rows()) {}
McsTable::McsTable(std::array<McsEntry, 32> rows) : rows_(rows) {}

McsTable McsTable::load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open MCS table '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  std::array<McsEntry, 32> rows{};
  std::array<bool, 32> seen{};
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int mcs = 0, qm = 0;
    double rate = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> mcs >> c1 >> qm >> c2 >> rate) || mcs < 0 || mcs > 31) {
      throw ConfigError("MCS table '" + path.string() + "': malformed row '" + line + "'");
    }
    rows[static_cast<std::size_t>(mcs)] = {qm, rate};
    seen[static_cast<std::size_t>(mcs)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ConfigError("MCS table '" + path.string() + "' must define all 32 MCS indices");
  }
  return McsTable(rows);
}

double McsTable::efficiency(double mcs) const {
  if (!(mcs >= 0.0 && mcs <= 31.0)) throw std::invalid_argument("MCS " + std::to_string(mcs) + " outside [0, 31]");
  const auto lo = static_cast<std::size_t>(std::floor(mcs));
  const std::size_t hi = std::min<std::size_t>(lo + 1, 31);
  const double frac = mcs - static_cast<double>(lo);
  const double e_lo = rows_[lo].modulation_bits * rows_[lo].code_rate;
  const double e_hi = rows_[hi].modulation_bits * rows_[hi].code_rate;
  return e_lo + frac * (e_hi - e_lo);
}

const McsTable& default_mcs_table() {
  static const McsTable table;
  return table;
}

double transport_block_bits(double mcs, double n_rb, const McsTable& table) {
  return n_rb * 12.0 * 14.0 * table.efficiency(mcs);
}

Throughput derive_throughput(const DciAggregate& agg, double bandwidth_rb, double subframes, const McsTable& table) {
  const double rb_down = agg.rb_down / 100.0 * bandwidth_rb;
  const double rb_up = agg.rb_up / 100.0 * bandwidth_rb;
  return {subframes * transport_block_bits(agg.mcs_down, rb_down, table),
          subframes * transport_block_bits(agg.mcs_up, rb_up, table)};
}

void derive_throughput(std::vector<DciAggregate>& rows, double bandwidth_rb) {
  for (DciAggregate& a : rows) {
    const Throughput t = derive_throughput(a, bandwidth_rb);
    a.thr_down = t.down;
    a.thr_up = t.up;
  }
}

// --- series & normalization ------------------------------------------------------

SiteSeries to_series(std::span<const DciAggregate> rows) {
  SiteSeries s;
  const std::size_t n = rows.size();
  s.timestamps.reserve(n);
  s.inputs = Tensor({n, 5});
  s.targets = Tensor({n, 5});
  for (std::size_t i = 0; i < n; ++i) {
    const DciAggregate& a = rows[i];
    if (i > 0 && a.timestamp <= rows[i - 1].timestamp) {
      throw std::invalid_argument("to_series: timestamps must be strictly increasing (row " + std::to_string(i) + ")");
    }
    s.timestamps.push_back(a.timestamp);
    const double in[5] = {a.rnti_count, a.rb_down, a.rb_up, a.mcs_down, a.mcs_up};
    const double tg[5] = {a.rnti_count, a.rb_down, a.rb_up, a.thr_down, a.thr_up};
    std::copy(in, in + 5, s.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * 5));
    std::copy(tg, tg + 5, s.targets.data().begin() + static_cast<std::ptrdiff_t>(i * 5));
  }
  return s;
}

NormParams fit_normalization(const Tensor& series, std::span<const std::string> names, std::size_t rows) {
  if (series.rank() != 2) throw ShapeError("fit_normalization: expects [T,k], got " + shape_str(series.shape()));
  const std::size_t k = series.dim(1);
  if (names.size() != k) throw std::invalid_argument("fit_normalization: column name count mismatch");
  rows = std::min(rows, series.dim(0));
  if (rows == 0) throw std::invalid_argument("fit_normalization: no rows to fit");
  NormParams params(k);
  for (std::size_t c = 0; c < k; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = 0; r < rows; ++r) {
      lo = std::min(lo, series[r * k + c]);
      hi = std::max(hi, series[r * k + c]);
    }
    if (!(lo < hi)) {
      throw std::invalid_argument("fit_normalization: column '" + names[c] + "' is constant (" + std::to_string(lo) +
                                  ")");
    }
    params[c] = {names[c], lo, hi};
  }
  return params;
}

double normalize_value(double v, const ColumnRange& r) {
  const double x = 2.0 * (v - r.min) / (r.max - r.min) - 1.0;
  return std::clamp(x, -1.0, 1.0);
}

double denormalize_value(double v, const ColumnRange& r) { return (v + 1.0) * 0.5 * (r.max - r.min) + r.min; }

namespace {
template <typename F>
Tensor map_columns(const Tensor& series, const NormParams& params, F f) {
  if (series.rank() != 2 || series.dim(1) != params.size()) {
    throw ShapeError("normalize: series " + shape_str(series.shape()) + " vs " + std::to_string(params.size()) +
                     " column ranges");
  }
  Tensor out(series.shape());
  const std::size_t k = params.size();
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = f(series[i], params[i % k]);
  return out;
}
}  // namespace

Tensor normalize(const Tensor& series, const NormParams& params) {
  return map_columns(series, params, normalize_value);
}

Tensor denormalize(const Tensor& series, const NormParams& params) {
  return map_columns(series, params, denormalize_value);
}

// --- windowing -------------------------------------------------------------------

WindowedDataset WindowedDataset::select(std::span<const std::size_t> idx) const {
  WindowedDataset out;
  out.p = p;
  out.dn = dn;
  out.input_norm = input_norm;
  out.target_norm = target_norm;
  const std::size_t xrow = X.size() / std::max<std::size_t>(size(), 1);
  const std::size_t yrow = Y.size() / std::max<std::size_t>(size(), 1);
  Shape xs = X.shape(), ys = Y.shape();
  xs[0] = idx.size();
  ys[0] = idx.size();
  out.X = Tensor(xs);
  out.Y = Tensor(ys);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>(i * xrow), xrow,
                out.X.data().begin() + static_cast<std::ptrdiff_t>(k * xrow));
    std::copy_n(Y.data().begin() + static_cast<std::ptrdiff_t>(i * yrow), yrow,
                out.Y.data().begin() + static_cast<std::ptrdiff_t>(k * yrow));
    out.last_row.push_back(last_row[i]);
    out.target_row.push_back(target_row[i]);
    out.target_time.push_back(target_time.empty() ? 0 : target_time[i]);
  }
  return out;
}

namespace {

WindowedDataset window_impl(const Tensor& series, const Tensor& targets, std::span<const std::int64_t> timestamps,
                            std::size_t p, std::size_t dn, std::int64_t bucket_seconds) {
  if (series.rank() != 2 || targets.rank() != 2 || series.dim(0) != targets.dim(0)) {
    throw ShapeError("window: series " + shape_str(series.shape()) + " and targets " + shape_str(targets.shape()) +
                     " must be [T,m] and [T,q]");
  }
  if (p == 0) throw std::invalid_argument("window: p must be >= 1");
  const std::size_t T = series.dim(0), m = series.dim(1), q = targets.dim(1);
  if (T < p + dn + 1) {
    throw std::invalid_argument("window: series of length " + std::to_string(T) + " too short; need at least p + dn + 1 = " +
                                std::to_string(p + dn + 1) + " rows");
  }
  const std::size_t candidates = T - p - dn;
  // Splice detection: a run of consecutive rows breaks where the time step differs.
  std::vector<std::size_t> run_end;  // last row reachable without a gap, per row
  if (!timestamps.empty()) {
    if (timestamps.size() != T) throw ShapeError("window: timestamp count differs from series length");
    run_end.assign(T, T - 1);
    for (std::size_t i = T - 1; i-- > 0;) {
      run_end[i] = timestamps[i + 1] - timestamps[i] == bucket_seconds ? run_end[i + 1] : i;
    }
  }
  std::vector<std::size_t> starts;
  starts.reserve(candidates);
  for (std::size_t n = 0; n < candidates; ++n) {
    if (!run_end.empty() && run_end[n] < n + p + dn) continue;
    starts.push_back(n);
  }
  WindowedDataset ds;
  ds.p = p;
  ds.dn = dn;
  ds.X = Tensor({starts.size(), p, m});
  ds.Y = Tensor({starts.size(), q});
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t n = starts[k];
    std::copy_n(series.data().begin() + static_cast<std::ptrdiff_t>(n * m), p * m,
                ds.X.data().begin() + static_cast<std::ptrdiff_t>(k * p * m));
    const std::size_t tgt = n + p + dn;
    std::copy_n(targets.data().begin() + static_cast<std::ptrdiff_t>(tgt * q), q,
                ds.Y.data().begin() + static_cast<std::ptrdiff_t>(k * q));
    ds.last_row.push_back(n + p - 1);
    ds.target_row.push_back(tgt);
    ds.target_time.push_back(timestamps.empty() ? static_cast<std::int64_t>(tgt) : timestamps[tgt]);
  }
  return ds;
}

}  // namespace

WindowedDataset window(const Tensor& series, const Tensor& targets, std::size_t p, std::size_t dn) {
  return window_impl(series, targets, {}, p, dn, kBucketSeconds);
}

WindowedDataset window(const Tensor& series, const Tensor& targets, std::span<const std::int64_t> timestamps,
                       std::size_t p, std::size_t dn, std::int64_t bucket_seconds) {
  return window_impl(series, targets, timestamps, p, dn, bucket_seconds);
}

Tensor pearson_matrix(const Tensor& series) {
  if (series.rank() != 2) throw ShapeError("pearson_matrix: expects [T,m], got " + shape_str(series.shape()));
  const std::size_t T = series.dim(0), m = series.dim(1);
  if (T < 2) throw std::invalid_argument("pearson_matrix: needs at least two rows");
  std::vector<double> mean(m, 0.0), sd(m, 0.0);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < m; ++c) mean[c] += series[r * m + c];
  for (double& v : mean) v /= static_cast<double>(T);
  Tensor cov({m, m});
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t a = 0; a < m; ++a) {
      const double da = series[r * m + a] - mean[a];
      for (std::size_t b = a; b < m; ++b) cov[a * m + b] += da * (series[r * m + b] - mean[b]);
    }
  for (std::size_t c = 0; c < m; ++c) {
    sd[c] = std::sqrt(cov[c * m + c]);
    if (sd[c] == 0.0) throw std::invalid_argument("pearson_matrix: column " + std::to_string(c) + " is constant");
  }
  Tensor out({m, m});
  for (std::size_t a = 0; a < m; ++a) {
    out[a * m + a] = 1.0;
    for (std::size_t b = a + 1; b < m; ++b) {
      const double r = std::clamp(cov[a * m + b] / (sd[a] * sd[b]), -1.0, 1.0);
      out[a * m + b] = out[b * m + a] = r;
    }
  }
  return out;
}

// --- files -------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_field(const std::string& s) {
  if (s.empty() || s == "nan" || s == "NaN" || s == "NA") return std::nullopt;
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

const std::vector<std::string> kAggregateHeader{"timestamp", "rnti_count", "mcs_down", "mcs_up", "rb_down", "rb_up"};
const std::vector<std::string> kRecordHeader{"timestamp", "rnti", "mcs_down", "mcs_up", "rb_down", "rb_up"};

std::vector<std::string> read_header(std::ifstream& is, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("'" + path.string() + "' is empty");
  return split_csv(line);
}

}  // namespace

std::vector<DciRecord> read_record_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  if (read_header(is, path) != kRecordHeader) {
    throw ConfigError("'" + path.string() + "': expected header timestamp,rnti,mcs_down,mcs_up,rb_down,rb_up");
  }
  std::vector<DciRecord> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw ConfigError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected 6 fields");
    const auto ts = parse_field(cells[0]);
    if (!ts) throw ConfigError("'" + path.string() + "' line " + std::to_string(lineno) + ": missing timestamp");
    DciRecord r;
    r.timestamp = *ts;
    if (auto v = parse_field(cells[1])) r.rnti = static_cast<std::int64_t>(*v);
    r.mcs_down = parse_field(cells[2]);
    r.mcs_up = parse_field(cells[3]);
    r.rb_down = parse_field(cells[4]);
    r.rb_up = parse_field(cells[5]);
    out.push_back(r);
  }
  return out;
}

std::vector<DciAggregate> read_dci_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  const auto header = read_header(is, path);
  if (header == kRecordHeader) {
    is.close();
    const auto records = read_record_csv(path);
    return downsample(records);
  }
  if (header != kAggregateHeader) {
    throw ConfigError("'" + path.string() +
                      "': unrecognized header (expected timestamp,rnti_count,mcs_down,mcs_up,rb_down,rb_up)");
  }
  std::vector<DciAggregate> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw ConfigError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected 6 fields");
    std::array<std::optional<double>, 6> v;
    for (std::size_t i = 0; i < 6; ++i) v[i] = parse_field(cells[i]);
    if (std::any_of(v.begin(), v.end(), [](const auto& o) { return !o.has_value(); })) continue;
    DciAggregate a;
    a.timestamp = static_cast<std::int64_t>(*v[0]);
    a.rnti_count = *v[1];
    a.mcs_down = *v[2];
    a.mcs_up = *v[3];
    a.rb_down = *v[4];
    a.rb_up = *v[5];
    if (!out.empty() && a.timestamp <= out.back().timestamp) {
      throw std::invalid_argument("'" + path.string() + "' line " + std::to_string(lineno) + ": timestamps not ordered");
    }
    out.push_back(a);
  }
  derive_throughput(out);
  return out;
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const DciAggregate> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << "timestamp,rnti_count,mcs_down,mcs_up,rb_down,rb_up\n";
  char buf[256];
  for (const DciAggregate& a : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.0f,%.3f,%.3f,%.2f,%.2f\n", static_cast<long long>(a.timestamp), a.rnti_count,
                  a.mcs_down, a.mcs_up, a.rb_down, a.rb_up);
    os << buf;
  }
}

namespace {
nlohmann::json norm_json(const NormParams& params) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : params) j.push_back({{"name", c.name}, {"min", c.min}, {"max", c.max}});
  return j;
}
NormParams norm_from_json(const nlohmann::json& j) {
  NormParams out;
  for (const auto& c : j) out.push_back({c.at("name"), c.at("min"), c.at("max")});
  return out;
}
Tensor index_tensor(const auto& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
  return t;
}
}  // namespace

void save_dataset(const std::filesystem::path& stem, const WindowedDataset& ds) {
  std::filesystem::path bin = stem, side = stem;
  bin += ".bin";
  side += ".json";
  write_tensors(bin, {{"X", ds.X},
                      {"Y", ds.Y},
                      {"last_row", index_tensor(ds.last_row)},
                      {"target_row", index_tensor(ds.target_row)},
                      {"target_time", index_tensor(ds.target_time)}});
  nlohmann::json j = {{"format", "trafficdtl-dataset/1"},
                      {"payload", bin.filename().string()},
                      {"p", ds.p},
                      {"dn", ds.dn},
                      {"windows", ds.size()},
                      {"input_columns", kInputColumns},
                      {"target_columns", kTargetColumns},
                      {"input_norm", norm_json(ds.input_norm)},
                      {"target_norm", norm_json(ds.target_norm)}};
  write_json(side, j);
}

WindowedDataset load_dataset(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, side = stem;
  bin += ".bin";
  side += ".json";
  const nlohmann::json j = read_json(side);
  auto entries = read_tensors(bin);
  if (entries.size() != 5) throw ShapeError("dataset container '" + bin.string() + "' must hold 5 tensors");
  WindowedDataset ds;
  ds.p = j.at("p");
  ds.dn = j.at("dn");
  ds.input_norm = norm_from_json(j.at("input_norm"));
  ds.target_norm = norm_from_json(j.at("target_norm"));
  ds.X = std::move(entries[0].tensor);
  ds.Y = std::move(entries[1].tensor);
  for (double v : entries[2].tensor.data()) ds.last_row.push_back(static_cast<std::size_t>(v));
  for (double v : entries[3].tensor.data()) ds.target_row.push_back(static_cast<std::size_t>(v));
  for (double v : entries[4].tensor.data()) ds.target_time.push_back(static_cast<std::int64_t>(v));
  return ds;
}

}  // namespace trafficdtl
