// trafficdtl: generate, train, transfer, svr, explain, energy, report.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>

#include "trafficdtl/error.hpp"
#include "trafficdtl/experiment.hpp"
#include "trafficdtl/runtime.hpp"

namespace td = trafficdtl;

namespace {

struct Overrides {
  std::string config;
  std::vector<std::string> sites;
  std::vector<std::string> archs;
  std::vector<std::size_t> p, dn;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::string teacher;
  std::string out;
  std::optional<std::size_t> jobs;
};

td::ExperimentConfig resolve(const Overrides& o) {
  td::ExperimentConfig cfg = o.config.empty() ? td::ExperimentConfig{} : td::load_config(o.config);
  if (!o.sites.empty()) cfg.sites = o.sites;
  if (!o.archs.empty()) cfg.archs = o.archs;
  if (!o.p.empty()) cfg.p_grid = o.p;
  if (!o.dn.empty()) cfg.dn_grid = o.dn;
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (!o.teacher.empty()) {
    // A weights file or stem selects a pre-trained teacher; anything else names the teacher site.
    const std::filesystem::path t(o.teacher);
    if (std::filesystem::exists(t) || std::filesystem::exists(t.string() + ".json")) {
      cfg.teacher_weights = o.teacher;
    } else if (t.has_extension() && t.extension() != ".csv") {
      throw td::ConfigError("--teacher: weights '" + o.teacher + "' not found");
    } else {
      cfg.teacher_site = o.teacher;
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  td::configure_allocator();
  CLI::App app{"Traffic forecasting with deep transfer learning on LTE control-channel data"};
  app.require_subcommand(1);
  Overrides o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--site", o.sites, "site profile name or CSV path (repeatable)");
    sub->add_option("--arch", o.archs, "rnn or cnn (repeatable)")->check(CLI::IsMember({"rnn", "cnn"}));
    sub->add_option("--p", o.p, "window length (repeatable)");
    sub->add_option("--dn", o.dn, "forecast offset (repeatable)");
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--runs", o.runs, "replicate seeds per cell");
    sub->add_option("--teacher", o.teacher, "teacher site name or weights path");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("generate", "write synthetic site CSVs");
  auto* trn = app.add_subcommand("train", "stand-alone grid and persistence baseline");
  auto* xfer = app.add_subcommand("transfer", "teacher training and freeze-mask sweep");
  auto* svr = app.add_subcommand("svr", "support vector regression baseline grid");
  auto* xai = app.add_subcommand("explain", "SmoothGrad and LRP heatmaps");
  auto* en = app.add_subcommand("energy", "energy table from the run ledger");
  auto* rep = app.add_subcommand("report", "MSE grids from the run ledger");
  for (auto* s : {gen, trn, xfer, svr, xai, en, rep}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const td::ExperimentConfig cfg = resolve(o);
    if (gen->parsed()) {
      for (const auto& p : td::run_generate(cfg)) std::cout << p.string() << '\n';
    } else if (trn->parsed()) {
      std::cout << td::run_train(cfg) << " runs recorded in " << (cfg.out_dir / "runs.jsonl").string() << '\n';
    } else if (xfer->parsed()) {
      std::cout << td::run_transfer(cfg) << " runs recorded in " << (cfg.out_dir / "runs.jsonl").string() << '\n';
    } else if (svr->parsed()) {
      std::cout << td::run_svr(cfg) << " runs recorded in " << (cfg.out_dir / "runs.jsonl").string() << '\n';
    } else if (xai->parsed()) {
      for (const auto& p : td::run_explain(cfg)) std::cout << p.string() << '\n';
    } else if (en->parsed()) {
      std::cout << td::run_energy(cfg).string() << '\n';
    } else if (rep->parsed()) {
      for (const auto& p : td::run_report(cfg)) std::cout << p.string() << '\n';
    }
  } catch (const td::NumericalError& e) {
    std::cerr << "numerical failure in " << e.op() << ": " << e.what() << '\n';
    return 3;
  } catch (const td::ConvergenceError& e) {
    std::cerr << "not converged (violation " << e.violation() << "): " << e.what() << '\n';
    return 4;
  } catch (const td::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
