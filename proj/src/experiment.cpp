#include "trafficdtl/experiment.hpp"

#include <cstdio>
#include <iostream>
#include <mutex>

#include "trafficdtl/error.hpp"
#include "trafficdtl/io.hpp"
#include "trafficdtl/runtime.hpp"
#include "trafficdtl/svr.hpp"
#include "trafficdtl/synth.hpp"
#include "trafficdtl/transfer.hpp"
#include "trafficdtl/xai.hpp"

namespace trafficdtl {

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* name, T& out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + name + "': " + e.what());
  }
}

std::string cell_tag(const std::string& site, const std::string& arch, std::size_t p, std::size_t dn) {
  return site + "_" + arch + "_p" + std::to_string(p) + "_dn" + std::to_string(dn);
}

ModelGraph build(const std::string& arch, std::size_t p, std::uint64_t seed) {
  return parse_arch(arch) == Arch::rnn ? build_rnn(p, 5, 5, {}, seed) : build_cnn(p, 5, 5, {}, seed);
}

TrainConfig train_config(const ExperimentConfig& cfg, const std::string& arch, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  if (t.batch_size == 0) t.batch_size = TrainConfig::default_batch(parse_arch(arch));
  t.seed = seed;
  return t;
}

void log(const std::string& line) {
  static std::mutex m;
  std::lock_guard lock(m);
  std::cerr << line << std::endl;
}

RunRecord base_record(const ExperimentConfig& cfg, const std::string& kind, const std::string& site,
                      const std::string& arch, std::size_t p, std::size_t dn, std::uint64_t seed) {
  RunRecord r;
  r.kind = kind;
  r.site = site;
  r.arch = arch;
  r.p = p;
  r.dn = dn;
  r.seed = seed;
  nlohmann::json h = {{"train", {{"epochs", cfg.train.epochs}, {"patience", cfg.train.patience},
                                 {"batch", cfg.train.batch_size}, {"lr", cfg.train.optimizer.learning_rate}}},
                      {"train_stride", cfg.train_stride},
                      {"train_days", cfg.train_days_for(site)}};
  if (kind == "transfer" || kind == "teacher") {
    h["teacher_stride"] = cfg.teacher_stride;
    h["teacher_validation_stride"] = cfg.teacher_validation_stride;
    h["teacher_weights"] = cfg.teacher_weights;
  }
  if (kind == "svr") h["svr"] = {{"C", cfg.svr_C}, {"epsilon", cfg.svr_epsilon}, {"gamma", cfg.svr_gamma},
                                 {"stride", cfg.svr_train_stride}, {"tol", cfg.svr_tol}};
  r.config_hash = config_hash(h);
  return r;
}

void fill(RunRecord& r, const EvalResult& e) {
  r.mse = e.mse;
  r.per_output_mse = e.per_output_mse;
  r.epochs_used = e.epochs_used;
  r.wall_time = e.wall_time;
}

bool done(const std::vector<RunRecord>& existing, const std::string& key) {
  for (const auto& r : existing)
    if (r.key() == key) return true;
  return false;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  ExperimentConfig c;
  read_field(j, "sites", c.sites);
  read_field(j, "p_grid", c.p_grid);
  read_field(j, "dn_grid", c.dn_grid);
  read_field(j, "archs", c.archs);
  read_field(j, "seed", c.seed);
  read_field(j, "runs", c.runs);
  read_field(j, "train_days", c.train_days);
  read_field(j, "default_train_days", c.default_train_days);
  if (j.contains("train")) {
    const auto& t = j["train"];
    if (!t.is_object()) throw ConfigError("config field 'train': must be an object");
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "patience", c.train.patience);
    read_field(t, "learning_rate", c.train.optimizer.learning_rate);
    std::string opt = c.train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
    read_field(t, "optimizer", opt);
    if (opt != "adam" && opt != "sgd") throw ConfigError("config field 'train.optimizer': expected adam or sgd");
    c.train.optimizer.kind = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  }
  read_field(j, "train_stride", c.train_stride);
  read_field(j, "teacher_stride", c.teacher_stride);
  read_field(j, "teacher_validation_stride", c.teacher_validation_stride);
  read_field(j, "teacher_site", c.teacher_site);
  read_field(j, "teacher_weights", c.teacher_weights);
  read_field(j, "svr_C", c.svr_C);
  read_field(j, "svr_epsilon", c.svr_epsilon);
  read_field(j, "svr_gamma", c.svr_gamma);
  read_field(j, "svr_train_stride", c.svr_train_stride);
  read_field(j, "svr_tol", c.svr_tol);
  read_field(j, "xai_methods", c.xai_methods);
  read_field(j, "xai_stride", c.xai_stride);
  read_field(j, "xai_noise_samples", c.xai_noise_samples);
  read_field(j, "xai_sigma", c.xai_sigma);
  if (j.contains("power_model")) c.power = PowerModel::from_json(j["power_model"]);
  std::string out = c.out_dir.string();
  read_field(j, "out_dir", out);
  c.out_dir = out;
  read_field(j, "jobs", c.jobs);
  for (const auto& [key, value] : j.items()) {
    static const std::vector<std::string> known{
        "sites", "p_grid", "dn_grid", "archs", "seed", "runs", "train_days", "default_train_days", "train",
        "train_stride", "teacher_stride", "teacher_validation_stride", "teacher_site", "teacher_weights", "svr_C",
        "svr_epsilon", "svr_gamma", "svr_train_stride", "svr_tol", "xai_methods", "xai_stride", "xai_noise_samples",
        "xai_sigma", "power_model", "out_dir", "jobs"};
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("config: unknown field '" + key + "'");
  }
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"sites", sites},
          {"p_grid", p_grid},
          {"dn_grid", dn_grid},
          {"archs", archs},
          {"seed", seed},
          {"runs", runs},
          {"train_days", train_days},
          {"default_train_days", default_train_days},
          {"train",
           {{"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"patience", train.patience},
            {"learning_rate", train.optimizer.learning_rate},
            {"optimizer", train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"}}},
          {"train_stride", train_stride},
          {"teacher_stride", teacher_stride},
          {"teacher_validation_stride", teacher_validation_stride},
          {"teacher_site", teacher_site},
          {"teacher_weights", teacher_weights},
          {"svr_C", svr_C},
          {"svr_epsilon", svr_epsilon},
          {"svr_gamma", svr_gamma},
          {"svr_train_stride", svr_train_stride},
          {"svr_tol", svr_tol},
          {"xai_methods", xai_methods},
          {"xai_stride", xai_stride},
          {"xai_noise_samples", xai_noise_samples},
          {"xai_sigma", xai_sigma},
          {"power_model", power.to_json()},
          {"out_dir", out_dir.string()},
          {"jobs", jobs}};
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (sites.empty()) fail("sites", "must be nonempty");
  if (p_grid.empty()) fail("p_grid", "must be nonempty");
  if (dn_grid.empty()) fail("dn_grid", "must be nonempty");
  if (archs.empty()) fail("archs", "must be nonempty");
  for (auto p : p_grid)
    if (p < 2) fail("p_grid", "window lengths must be >= 2");
  for (const auto& a : archs)
    if (a != "rnn" && a != "cnn") fail("archs", "unknown architecture '" + a + "'");
  if (runs == 0) fail("runs", "must be >= 1");
  if (train_stride == 0 || teacher_stride == 0 || teacher_validation_stride == 0 || svr_train_stride == 0) {
    fail("*_stride", "strides must be >= 1");
  }
  for (const auto& [site, days] : train_days)
    if (!(days > 0)) fail("train_days." + site, "must be positive");
  if (svr_C.empty() || svr_epsilon.empty()) fail("svr_C/svr_epsilon", "grids must be nonempty");
  for (const auto& m : xai_methods)
    if (m != "smoothgrad" && m != "lrp") fail("xai_methods", "unknown method '" + m + "'");
  if (xai_noise_samples == 0) fail("xai_noise_samples", "must be >= 1");
  if (xai_sigma < 0) fail("xai_sigma", "must be >= 0");
  if (jobs == 0) fail("jobs", "must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail("out_dir", "cannot create '" + out_dir.string() + "': " + ec.message());
}

double ExperimentConfig::train_days_for(const std::string& site) const {
  const auto it = train_days.find(site_name(site));
  return it == train_days.end() ? default_train_days : it->second;
}

std::uint64_t ExperimentConfig::run_seed(std::size_t k) const { return derive_seed(seed, "run/" + std::to_string(k)); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return ExperimentConfig::from_json(j);
}

std::string site_name(const std::string& site) {
  const std::filesystem::path p(site);
  return p.has_extension() ? p.stem().string() : site;
}

SiteSeries load_site(const ExperimentConfig& cfg, const std::string& site) {
  if (std::filesystem::path(site).has_extension()) {
    if (!std::filesystem::exists(site)) throw ConfigError("site file '" + site + "' does not exist");
    return to_series(read_dci_csv(site));
  }
  const auto cached = cfg.out_dir / "data" / (site + ".csv");
  if (std::filesystem::exists(cached)) return to_series(read_dci_csv(cached));
  return to_series(generate(builtin_profile(site), derive_seed(cfg.seed, "site/" + site)));
}

std::filesystem::path model_stem(const ExperimentConfig& cfg, const std::string& site, const std::string& arch,
                                 std::size_t p, std::size_t dn, std::size_t run) {
  return cfg.out_dir / "models" / (cell_tag(site, arch, p, dn) + "_run" + std::to_string(run));
}

std::vector<std::filesystem::path> run_generate(const ExperimentConfig& cfg) {
  std::vector<std::filesystem::path> out;
  for (const auto& site : cfg.sites) {
    if (std::filesystem::path(site).has_extension()) continue;
    const auto rows = generate(builtin_profile(site), derive_seed(cfg.seed, "site/" + site));
    const auto path = cfg.out_dir / "data" / (site + ".csv");
    write_aggregate_csv(path, rows);
    log("generate: " + site + " -> " + path.string() + " (" + std::to_string(rows.size()) + " buckets)");
    out.push_back(path);
  }
  return out;
}

std::size_t run_train(const ExperimentConfig& cfg) {
  RunLedger ledger(cfg.out_dir);
  const auto existing = ledger.load();
  std::size_t added = 0;
  std::mutex count_mutex;
  for (const auto& site_entry : cfg.sites) {
    const std::string site = site_name(site_entry);
    const SiteSeries series = load_site(cfg, site_entry);
    for (auto p : cfg.p_grid)
      for (auto dn : cfg.dn_grid) {
        const PreparedData data = prepare(series, p, dn, cfg.train_days_for(site_entry));
        const WindowedDataset tr = subsample(data.train, cfg.train_stride);

        RunRecord pers = base_record(cfg, "persistence", site, "persistence", p, dn, 0);
        if (!done(existing, pers.key())) {
          fill(pers, persistence(data.validation, data.normalized_targets));
          ledger.append(pers);
          ++added;
        }
        struct Task {
          std::string arch;
          std::size_t run;
        };
        std::vector<Task> tasks;
        for (const auto& arch : cfg.archs)
          for (std::size_t k = 0; k < cfg.runs; ++k) tasks.push_back({arch, k});
        parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
          const auto& [arch, k] = tasks[i];
          const std::uint64_t seed = cfg.run_seed(k);
          RunRecord rec = base_record(cfg, "standalone", site, arch, p, dn, seed);
          const auto stem = model_stem(cfg, site, arch, p, dn, k);
          if (done(existing, rec.key()) && std::filesystem::exists(stem.string() + ".json")) return;
          ModelGraph model = build(arch, p, derive_seed(seed, "init"));
          const TrainResult res = train(model, tr, data.validation, train_config(cfg, arch, seed));
          fill(rec, res.eval);
          rec.param_count = model.param_count();
          rec.trainable_param_count = model.trainable_param_count();
          save_model(stem, model);
          ledger.append(rec);
          log("train: " + cell_tag(site, arch, p, dn) + " run " + std::to_string(k) + " mse " +
              std::to_string(rec.mse) + " epochs " + std::to_string(rec.epochs_used));
          std::lock_guard lock(count_mutex);
          ++added;
        });
      }
  }
  return added;
}

std::size_t run_transfer(const ExperimentConfig& cfg) {
  RunLedger ledger(cfg.out_dir);
  const auto existing = ledger.load();
  const std::string teacher_site = site_name(cfg.teacher_site);
  const SiteSeries teacher_series = load_site(cfg, cfg.teacher_site);
  std::size_t added = 0;
  std::mutex count_mutex;
  std::vector<std::pair<std::string, SiteSeries>> students;
  for (const auto& s : cfg.sites)
    if (site_name(s) != teacher_site) students.emplace_back(s, load_site(cfg, s));
  if (students.empty()) throw ConfigError("config field 'sites': transfer needs a student site besides the teacher");

  for (const auto& arch : cfg.archs)
    for (auto p : cfg.p_grid)
      for (auto dn : cfg.dn_grid) {
        // Teacher: supplied weights, a previously trained one, or train now.
        ModelGraph teacher = build(arch, p, 0);
        const auto teacher_stem = cfg.out_dir / "models" / ("teacher_" + cell_tag(teacher_site, arch, p, dn));
        if (!cfg.teacher_weights.empty()) {
          std::filesystem::path stem = cfg.teacher_weights;
          if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
          ModelGraph loaded = load_model(stem);
          require_same_architecture(loaded, teacher);
          teacher = std::move(loaded);
          teacher.freeze_all(false);
        } else if (std::filesystem::exists(teacher_stem.string() + ".json")) {
          teacher = load_model(teacher_stem);
          teacher.freeze_all(false);
        } else {
          const PreparedData td = prepare(teacher_series, p, dn, cfg.train_days_for(cfg.teacher_site));
          const std::uint64_t seed = derive_seed(cfg.seed, "teacher");
          teacher = build(arch, p, derive_seed(seed, "init"));
          const TrainResult res = train(teacher, subsample(td.train, cfg.teacher_stride),
                                        subsample(td.validation, cfg.teacher_validation_stride),
                                        train_config(cfg, arch, seed));
          RunRecord rec = base_record(cfg, "teacher", teacher_site, arch, p, dn, seed);
          fill(rec, res.eval);
          rec.param_count = rec.trainable_param_count = teacher.param_count();
          save_model(teacher_stem, teacher);
          ledger.append(rec);
          ++added;
          log("transfer: teacher " + cell_tag(teacher_site, arch, p, dn) + " mse " + std::to_string(rec.mse));
        }

        for (const auto& [entry, series] : students) {
          const std::string site = site_name(entry);
          const PreparedData data = prepare(series, p, dn, cfg.train_days_for(entry));
          const WindowedDataset tr = subsample(data.train, cfg.train_stride);
          const auto masks = all_masks(teacher);
          parallel_for(masks.size() * cfg.runs, cfg.jobs, [&](std::size_t i) {
            const FreezeMask& mask = masks[i / cfg.runs];
            const std::size_t k = i % cfg.runs;
            const std::uint64_t seed = cfg.run_seed(k);
            RunRecord rec = base_record(cfg, "transfer", site, arch, p, dn, seed);
            rec.teacher_site = teacher_site;
            rec.mask = mask.label;
            if (done(existing, rec.key())) return;
            const TransferResult res = transfer(teacher, tr, data.validation, mask, train_config(cfg, arch, seed));
            fill(rec, res.train.eval);
            rec.param_count = res.student.param_count();
            rec.trainable_param_count = mask.trainable_param_count(teacher);
            ledger.append(rec);
            log("transfer: " + cell_tag(site, arch, p, dn) + " mask " + mask.label + " run " + std::to_string(k) +
                " mse " + std::to_string(rec.mse));
            std::lock_guard lock(count_mutex);
            ++added;
          });
        }
      }
  return added;
}

std::size_t run_svr(const ExperimentConfig& cfg) {
  RunLedger ledger(cfg.out_dir);
  const auto existing = ledger.load();
  std::size_t added = 0;
  for (const auto& entry : cfg.sites) {
    const std::string site = site_name(entry);
    const SiteSeries series = load_site(cfg, entry);
    for (auto p : cfg.p_grid)
      for (auto dn : cfg.dn_grid) {
        RunRecord rec = base_record(cfg, "svr", site, "svr", p, dn, 0);
        if (done(existing, rec.key())) continue;
        const PreparedData data = prepare(series, p, dn, cfg.train_days_for(entry));
        const WindowedDataset tr = subsample(data.train, cfg.svr_train_stride);
        SvrParams base;
        base.tol = cfg.svr_tol;
        base.seed = cfg.seed;
        const SvrGridResult g = svr_grid_search(flatten_windows(tr.X), tr.Y, flatten_windows(data.validation.X),
                                                data.validation.Y, cfg.svr_C, cfg.svr_epsilon, cfg.svr_gamma, base,
                                                cfg.jobs);
        rec.mse = g.best.mse;
        rec.per_output_mse = g.best.per_output_mse;
        rec.wall_time = g.best.fit_seconds;
        rec.extra = {{"C", g.best.C}, {"epsilon", g.best.epsilon}, {"gamma", g.best.gamma},
                     {"train_windows", tr.size()}, {"grid_points", g.points.size()}};
        ledger.append(rec);
        ++added;
        log("svr: " + cell_tag(site, "svr", p, dn) + " mse " + std::to_string(rec.mse));
      }
  }
  return added;
}

std::vector<std::filesystem::path> run_explain(const ExperimentConfig& cfg) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : cfg.sites) {
    const std::string site = site_name(entry);
    const SiteSeries series = load_site(cfg, entry);
    for (const auto& arch : cfg.archs)
      for (auto p : cfg.p_grid)
        for (auto dn : cfg.dn_grid) {
          const auto stem = model_stem(cfg, site, arch, p, dn, 0);
          if (!std::filesystem::exists(stem.string() + ".json")) {
            throw ConfigError("explain: no trained model at " + stem.string() + ".json; run `train` first");
          }
          const ModelGraph model = load_model(stem);
          const PreparedData data = prepare(series, p, dn, cfg.train_days_for(entry));
          AttributionOptions opt;
          opt.stride = cfg.xai_stride;
          opt.smoothgrad = {cfg.xai_noise_samples, cfg.xai_sigma, derive_seed(cfg.seed, "xai")};
          std::vector<AttributionMap> maps;
          for (const auto& m : cfg.xai_methods)
            for (std::size_t i = 0; i < model.outputs(); ++i)
              maps.push_back(attribute_dataset(model, data.train.X, parse_method(m), i, opt));
          out.push_back(export_heatmaps(cfg.out_dir / "heatmaps" / cell_tag(site, arch, p, dn), maps));
          log("explain: " + out.back().string());
        }
  }
  return out;
}

std::filesystem::path run_energy(const ExperimentConfig& cfg) {
  const auto rows = energy_table(read_ledger(cfg.out_dir), cfg.power);
  const auto path = cfg.out_dir / "energy.csv";
  write_energy_csv(path, rows);
  return path;
}

std::vector<std::filesystem::path> run_report(const ExperimentConfig& cfg) {
  return write_report(cfg.out_dir / "report", summarize(read_ledger(cfg.out_dir)));
}

}  // namespace trafficdtl
