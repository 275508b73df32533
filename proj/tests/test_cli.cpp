#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "trafficdtl/ledger.hpp"

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("trafficdtl_cli_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(TRAFFICDTL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generate is deterministic") {
  const auto a = temp_dir("gen_a"), b = temp_dir("gen_b");
  CHECK(cli("generate --site PS --seed 1 --out " + a.string()) == 0);
  CHECK(cli("generate --site PS --seed 1 --out " + b.string()) == 0);
  CHECK(slurp(a / "data" / "PS.csv") == slurp(b / "data" / "PS.csv"));
  CHECK(slurp(a / "data" / "PS.csv").rfind("timestamp,rnti_count,mcs_down,mcs_up,rb_down,rb_up\n", 0) == 0);
}

TEST_CASE("train records the parameter count and resumes") {
  const auto dir = temp_dir("train");
  std::ofstream(dir / "cfg.json") << R"({"train": {"epochs": 1}, "train_stride": 40, "runs": 1})";
  const std::string args = "train --config " + (dir / "cfg.json").string() + " --site PS --arch cnn --p 10 --dn 0 --out " +
                           (dir / "out").string();
  REQUIRE(cli(args) == 0);
  const auto recs = trafficdtl::read_ledger(dir / "out");
  bool found = false;
  for (const auto& r : recs)
    if (r.kind == "standalone") {
      found = true;
      CHECK(r.param_count == 33285);
      CHECK(r.arch == "cnn");
    }
  CHECK(found);
  CHECK(cli(args) == 0);
  CHECK(trafficdtl::read_ledger(dir / "out").size() == recs.size());
}

TEST_CASE("report over an empty ledger") {
  const auto dir = temp_dir("report");
  CHECK(cli("report --out " + dir.string()) == 0);
  CHECK(slurp(dir / "report" / "report.csv") == "site,mode,arch,p,dn,mse,runs,best,mask\n");
}

TEST_CASE("exit codes") {
  const auto dir = temp_dir("codes");
  std::ofstream(dir / "empty_grid.json") << R"({"p_grid": []})";
  std::ofstream(dir / "typo.json") << R"({"p_grid": [10], "epochz": 3})";
  std::ofstream(dir / "broken.json") << "{\n \"seed\": 1,\n \"runs\": \n}";
  CHECK(cli("train --config " + (dir / "empty_grid.json").string() + " --out " + dir.string()) == 2);
  CHECK(cli("train --config " + (dir / "typo.json").string() + " --out " + dir.string()) == 2);
  CHECK(cli("train --config " + (dir / "broken.json").string() + " --out " + dir.string()) == 2);
  CHECK(cli("train --arch lstm --out " + dir.string()) == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("explain --site EB --arch cnn --p 10 --dn 0 --out " + (dir / "nothing").string()) == 2);
  CHECK(cli("--help") == 0);
}
