#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "trafficdtl/dataset.hpp"
#include "trafficdtl/error.hpp"

using namespace trafficdtl;

namespace {

DciRecord rec(double ts, std::int64_t rnti, double mcs_d, double mcs_u, double rb_d, double rb_u) {
  return {ts, rnti, mcs_d, mcs_u, rb_d, rb_u};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("trafficdtl_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("downsampling counts distinct RNTIs and averages MCS") {
  std::vector<DciRecord> r{rec(0.001, 7, 10, 5, 10, 4), rec(0.5, 7, 20, 7, 20, 6), rec(130.0, 9, 12, 6, 50, 50)};
  const auto agg = downsample(r);
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].timestamp == 0);
  CHECK(agg[0].rnti_count == 1);
  CHECK(agg[0].mcs_down == 15);
  CHECK(agg[1].timestamp == 120);
}

TEST_CASE("empty buckets and buckets missing a variable are dropped") {
  DciRecord partial = rec(250, 3, 10, 10, 10, 10);
  partial.mcs_up.reset();
  std::vector<DciRecord> r{rec(0, 1, 1, 1, 1, 1), partial, rec(500, 2, 2, 2, 2, 2)};
  const auto agg = downsample(r);
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].timestamp == 0);
  CHECK(agg[1].timestamp == 480);
  std::vector<DciRecord> backwards{rec(10, 1, 1, 1, 1, 1), rec(5, 1, 1, 1, 1, 1)};
  CHECK_THROWS_AS(downsample(backwards), std::invalid_argument);
}

TEST_CASE("transport block size") {
  // MCS 10 -> 16QAM, TBS index 9; one-PRB TBS 136 bits. 50 RBs: 50 * 136.
  CHECK(transport_block_bits(10, 50) == doctest::Approx(6800).epsilon(1e-12));
  CHECK(transport_block_bits(10, 0) == 0);
  double prev = 0;
  for (int m = 0; m <= 31; ++m) {
    const double t = transport_block_bits(m, 20);
    CHECK(t >= prev);
    prev = t;
  }
  CHECK(default_mcs_table().row(0).modulation_bits == 2);
  CHECK(default_mcs_table().row(17).modulation_bits == 6);
  DciAggregate zero;
  zero.mcs_down = 20;
  CHECK(derive_throughput(zero).down == 0);
}

TEST_CASE("MCS table loads from CSV") {
  const auto dir = temp_dir("mcs");
  std::ofstream os(dir / "mcs.csv");
  os << "mcs,modulation_bits,code_rate\n";
  for (int m = 0; m < 32; ++m) os << m << ",2,0.5\n";
  os.close();
  const McsTable t = McsTable::load_csv(dir / "mcs.csv");
  CHECK(transport_block_bits(5, 10, t) == doctest::Approx(10 * 12 * 14 * 2 * 0.5));
}

TEST_CASE("normalization") {
  const ColumnRange r{"x", 2, 10};
  CHECK(normalize_value(6, r) == 0.0);
  CHECK(normalize_value(2, r) == -1.0);
  CHECK(normalize_value(10, r) == 1.0);
  CHECK(normalize_value(20, r) == 1.0);  // clamped
  for (double v : {2.0, 3.3, 7.1, 10.0}) CHECK(std::abs(denormalize_value(normalize_value(v, r), r) - v) < 1e-12);
  const Tensor s({3, 2}, std::vector<double>{1, 5, 2, 5, 3, 5});
  const std::vector<std::string> names{"a", "flat"};
  try {
    fit_normalization(s, names, 3);
    FAIL("constant column accepted");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
}

TEST_CASE("windowing boundaries") {
  const Tensor s({100, 2});
  const Tensor t({100, 3});
  CHECK(window(s, t, 10, 0).size() == 90);
  const Tensor s2({12, 2}), t2({12, 3});
  const auto one = window(s2, t2, 10, 1);
  CHECK(one.size() == 1);
  CHECK(one.last_row[0] == 9);
  CHECK(one.target_row[0] == 11);
  CHECK_THROWS_AS(window(Tensor({11, 2}), Tensor({11, 3}), 10, 1), std::invalid_argument);
}

TEST_CASE("windowing matches naive enumeration on random triples") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
    const std::size_t dn = std::uniform_int_distribution<std::size_t>(0, 14)(rng);
    const std::size_t T = p + dn + 1 + std::uniform_int_distribution<std::size_t>(0, 80)(rng);
    const Tensor s = oracle::random_tensor({T, 3}, rng), tg = oracle::random_tensor({T, 2}, rng);
    std::vector<std::int64_t> ts(T);
    std::int64_t now = 0;
    for (auto& v : ts) {
      v = now;
      now += std::bernoulli_distribution(0.05)(rng) ? 360 : 120;
    }
    for (bool gaps : {false, true}) {
      const auto ds = gaps ? window(s, tg, ts, p, dn) : window(s, tg, p, dn);
      const auto ref = oracle::naive_windows(T, p, dn, gaps ? ts : std::vector<std::int64_t>{});
      REQUIRE(ds.size() == ref.size());
      for (std::size_t k = 0; k < ref.size(); ++k) {
        CHECK(ds.last_row[k] == ref[k].last_row);
        CHECK(ds.target_row[k] == ref[k].target_row);
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t c = 0; c < 3; ++c) CHECK(ds.X.at({k, r, c}) == s.at({ref[k].first_row + r, c}));
        for (std::size_t c = 0; c < 2; ++c) CHECK(ds.Y.at({k, c}) == tg.at({ref[k].target_row, c}));
      }
    }
  }
}

TEST_CASE("pearson matrix") {
  std::mt19937_64 rng(9);
  const Tensor s = oracle::random_tensor({1000, 5}, rng);
  const Tensor r = pearson_matrix(s);
  for (std::size_t a = 0; a < 5; ++a) {
    CHECK(r.at({a, a}) == 1.0);
    for (std::size_t b = 0; b < 5; ++b) {
      std::vector<double> x(1000), y(1000);
      for (std::size_t i = 0; i < 1000; ++i) {
        x[i] = s.at({i, a});
        y[i] = s.at({i, b});
      }
      CHECK(std::abs(r.at({a, b}) - oracle::pearson_two_pass(x, y)) < 1e-10);
    }
  }
  const Tensor neg({4, 2}, std::vector<double>{1, -1, 2, -2, 3, -3, 5, -5});
  CHECK(pearson_matrix(neg).at({0, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("CSV round trips and the record schema is downsampled") {
  const auto dir = temp_dir("csv");
  std::vector<DciAggregate> rows(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i].timestamp = 1551657600 + 120 * static_cast<std::int64_t>(i);
    rows[i].rnti_count = 10 + i;
    rows[i].mcs_down = 12.5;
    rows[i].mcs_up = 9.25;
    rows[i].rb_down = 30.5;
    rows[i].rb_up = 11.75;
  }
  derive_throughput(rows);
  write_aggregate_csv(dir / "a.csv", rows);
  const auto back = read_dci_csv(dir / "a.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[2].rnti_count == 12);
  CHECK(back[1].thr_down == doctest::Approx(rows[1].thr_down));

  std::ofstream os(dir / "r.csv");
  os << "timestamp,rnti,mcs_down,mcs_up,rb_down,rb_up\n0.001,5,10,4,20,10\n0.002,6,20,,20,10\n130.5,5,10,4,,10\n";
  os.close();
  const auto agg = read_dci_csv(dir / "r.csv");
  REQUIRE(agg.size() == 1);
  CHECK(agg[0].rnti_count == 2);
  CHECK(agg[0].mcs_down == 15);

  std::ofstream bad(dir / "bad.csv");
  bad << "time,foo\n1,2\n";
  bad.close();
  CHECK_THROWS(read_dci_csv(dir / "bad.csv"));
}

TEST_CASE("dataset save and load") {
  const auto dir = temp_dir("ds");
  std::mt19937_64 rng(1);
  const Tensor s = oracle::random_tensor({30, 5}, rng), t = oracle::random_tensor({30, 5}, rng);
  WindowedDataset ds = window(s, t, 4, 2);
  ds.input_norm = {{"a", 0, 1}};
  save_dataset(dir / "w", ds);
  const WindowedDataset back = load_dataset(dir / "w");
  CHECK(back.X == ds.X);
  CHECK(back.Y == ds.Y);
  CHECK(back.p == 4);
  CHECK(back.dn == 2);
  CHECK(back.target_row == ds.target_row);
  CHECK(back.input_norm[0].name == "a");
}
