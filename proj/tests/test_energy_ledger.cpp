#include <doctest.h>

#include <fstream>

#include "trafficdtl/energy.hpp"
#include "trafficdtl/error.hpp"
#include "trafficdtl/ledger.hpp"

using namespace trafficdtl;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("trafficdtl_el_" + name);
  std::filesystem::remove_all(p);
  return p;
}

RunRecord run(const std::string& kind, const std::string& site, const std::string& arch, std::size_t p, std::size_t dn,
              std::uint64_t seed, double mse, double wall = 1.0, const std::string& mask = "") {
  RunRecord r;
  r.kind = kind;
  r.site = site;
  r.arch = arch;
  r.p = p;
  r.dn = dn;
  r.seed = seed;
  r.mse = mse;
  r.wall_time = wall;
  r.mask = mask;
  if (kind == "transfer") r.teacher_site = "PS";
  return r;
}

}  // namespace

TEST_CASE("energy arithmetic") {
  CHECK(energy_wh(3600, {100, 0, 1.0, 1.0}) == doctest::Approx(100));
  CHECK(energy_wh(0, {}) == 0);
  const PowerModel pm;
  CHECK(savings_percent(energy_wh(100, pm), energy_wh(50, pm)) == doctest::Approx(50));
  CHECK(format_percent(savings_percent(19.8, 1.0)) == "94.95");
  CHECK(format_percent(savings_percent(1.0, 0.4)) == "60.00");
  CHECK(savings_percent(1.0, 0.4) == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(savings_percent(3.0, 3.0) == 0);
  CHECK(energy_wh(3600, pm) == doctest::Approx((250 + 69.66) * 1.67));
}

TEST_CASE("accounting and comparison") {
  const PowerModel pm;
  const EnergyReport a = account(run("standalone", "EB", "cnn", 10, 0, 1, 0.1, 20), pm);
  const EnergyReport b = account(run("transfer", "EB", "cnn", 10, 0, 1, 0.1, 10, "FTT"), pm);
  const EnergyComparison c = compare(a, b);
  CHECK(c.savings_percent == doctest::Approx(50));
  CHECK(compare(a, a).savings_percent == 0);
  CHECK_THROWS_AS(compare(a, account(run("transfer", "EB", "rnn", 10, 0, 1, 0.1, 10), pm)), std::invalid_argument);
  CHECK_THROWS_AS(account(run("standalone", "EB", "cnn", 10, 0, 1, 0.1, -1), pm), std::invalid_argument);
  CHECK_THROWS_AS(account(run("standalone", "EB", "cnn", 10, 0, 1, 0.1, std::nan("")), pm), std::invalid_argument);
  const EnergyReport mean = account(std::vector<RunRecord>{run("standalone", "EB", "cnn", 10, 0, 1, 0.1, 10),
                                                           run("standalone", "EB", "cnn", 10, 4, 1, 0.1, 30)},
                                    pm);
  CHECK(mean.wall_time == 20);
  CHECK(mean.runs == 2);
}

TEST_CASE("power model validation") {
  CHECK(PowerModel::from_json({{"core_power_w", 100}}).core_power_w == 100);
  CHECK_THROWS(PowerModel::from_json({{"pue", 0.5}}));
  CHECK_THROWS(PowerModel::from_json({{"core_power_w", -1}}));
}

TEST_CASE("ledger append, load and resume lookup") {
  const auto dir = temp_dir("ledger");
  RunLedger ledger(dir);
  CHECK(ledger.load().empty());
  const RunRecord r = run("standalone", "EB", "cnn", 10, 0, 7, 0.03, 2.5);
  ledger.append(r);
  ledger.append(run("svr", "EB", "svr", 10, 0, 0, 0.04, 0.5));
  const auto back = read_ledger(dir);
  REQUIRE(back.size() == 2);
  CHECK(back[0].to_json() == r.to_json());
  CHECK(ledger.find(r.key()).has_value());
  CHECK_FALSE(ledger.find(run("standalone", "EB", "cnn", 10, 4, 7, 0).key()).has_value());
  CHECK(read_ledger(temp_dir("missing")).empty());
  nlohmann::json j = r.to_json();
  j.erase("wall_time");
  CHECK_THROWS_AS(RunRecord::from_json(j), ConfigError);
}

TEST_CASE("config hash is stable and key ignores results") {
  CHECK(config_hash({{"a", 1}}) == config_hash({{"a", 1}}));
  CHECK(config_hash({{"a", 1}}) != config_hash({{"a", 2}}));
  CHECK(config_hash({{"a", 1}}).size() == 16);
  CHECK(run("standalone", "EB", "cnn", 10, 0, 1, 0.1).key() == run("standalone", "EB", "cnn", 10, 0, 1, 0.9, 5).key());
}

TEST_CASE("report summarizes seeds, flags the best and keeps the best mask") {
  std::vector<RunRecord> recs{
      run("standalone", "EB", "cnn", 10, 0, 1, 0.04), run("standalone", "EB", "cnn", 10, 0, 2, 0.06),
      run("transfer", "EB", "cnn", 10, 0, 1, 0.05, 1, "FFT"), run("transfer", "EB", "cnn", 10, 0, 2, 0.05, 1, "FFT"),
      run("transfer", "EB", "cnn", 10, 0, 1, 0.03, 1, "TTT"), run("transfer", "EB", "cnn", 10, 0, 2, 0.04, 1, "TTT"),
      run("svr", "EB", "svr", 10, 0, 0, 0.045),        run("teacher", "PS", "cnn", 10, 0, 1, 0.01),
  };
  const auto rows = summarize(recs);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.site == "EB");
    if (r.mode == "standalone") {
      CHECK(r.mse == doctest::Approx(0.05));
      CHECK(r.runs == 2);
      CHECK_FALSE(r.best);
    } else if (r.mode == "transfer_from_PS") {
      CHECK(r.mse == doctest::Approx(0.035));
      CHECK(r.mask == "TTT");
      CHECK(r.best);
    } else {
      CHECK(r.mode == "svr");
    }
  }
  const auto dir = temp_dir("report");
  const auto files = write_report(dir, rows);
  CHECK(files.size() == 4);
  std::ifstream is(dir / "grid_EB_standalone_cnn.csv");
  std::string header, line;
  std::getline(is, header);
  std::getline(is, line);
  CHECK(header == "p,dn=0");
  CHECK(line.rfind("10,", 0) == 0);
}

TEST_CASE("report of an empty ledger is an empty table") {
  const auto dir = temp_dir("empty");
  const auto files = write_report(dir, summarize({}));
  REQUIRE(files.size() == 1);
  std::ifstream is(files[0]);
  std::string header, line;
  std::getline(is, header);
  CHECK(header == "site,mode,arch,p,dn,mse,runs,best,mask");
  CHECK_FALSE(static_cast<bool>(std::getline(is, line)));
}

TEST_CASE("energy table pairs standalone and transfer runs") {
  std::vector<RunRecord> recs{run("standalone", "EB", "cnn", 10, 0, 1, 0.1, 20),
                              run("transfer", "EB", "cnn", 10, 0, 1, 0.1, 4, "FTT"),
                              run("transfer", "EB", "cnn", 10, 0, 1, 0.1, 0, "FFF"),
                              run("standalone", "EB", "rnn", 10, 0, 1, 0.1, 30)};
  const auto table = energy_table(recs, {});
  REQUIRE(table.size() >= 1);
  bool found = false;
  for (const auto& row : table)
    if (row.standalone.arch == "cnn") {
      found = true;
      CHECK(row.dtl.wall_time == doctest::Approx(2));
      CHECK(row.savings_percent == doctest::Approx(90));
    }
  CHECK(found);
}
