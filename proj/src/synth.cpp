#include "trafficdtl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include "trafficdtl/error.hpp"
#include "trafficdtl/io.hpp"

#ifndef TRAFFICDTL_DATA_DIR
#define TRAFFICDTL_DATA_DIR "data"
#endif

namespace trafficdtl {

namespace {

FeatureLevel level_from_json(const nlohmann::json& j, FeatureLevel fallback) {
  return {j.value("base", fallback.base), j.value("peak", fallback.peak)};
}

nlohmann::json level_json(const FeatureLevel& l) { return {{"base", l.base}, {"peak", l.peak}}; }

double round_to(double v, double scale) { return std::round(v * scale) / scale; }

// Linear interpolation over the 24-hour template, wrapping at midnight.
double template_load(const std::vector<double>& hourly, double hour) {
  const double h = std::fmod(hour, 24.0);
  const auto i = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(i);
  return hourly[i % 24] * (1.0 - frac) + hourly[(i + 1) % 24] * frac;
}

}  // namespace

SiteProfile SiteProfile::from_json(const nlohmann::json& j) {
  SiteProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.days = j.at("days").get<int>();
    p.start_timestamp = j.value("start_timestamp", p.start_timestamp);
    p.hourly_load = j.at("hourly_load").get<std::vector<double>>();
    p.weekend_factor = j.value("weekend_factor", p.weekend_factor);
    if (j.contains("weekend_night")) {
      const auto& w = j["weekend_night"];
      p.weekend_night_boost = w.value("boost", p.weekend_night_boost);
      p.night_start_hour = w.value("start_hour", p.night_start_hour);
      p.night_end_hour = w.value("end_hour", p.night_end_hour);
    }
    for (const auto& e : j.value("events", nlohmann::json::array())) {
      p.events.push_back({e.at("day").get<int>(), e.at("hour").get<double>(), e.at("duration_hours").get<double>(),
                          e.at("uplink_multiplier").get<double>()});
    }
    p.event_rb_up_floor = j.value("event_rb_up_floor", p.event_rb_up_floor);
    p.rnti = level_from_json(j.at("rnti_count"), p.rnti);
    p.rb_down = level_from_json(j.at("rb_down"), p.rb_down);
    p.rb_up = level_from_json(j.at("rb_up"), p.rb_up);
    p.mcs_down = level_from_json(j.value("mcs_down", nlohmann::json::object()), p.mcs_down);
    p.mcs_up = level_from_json(j.value("mcs_up", nlohmann::json::object()), p.mcs_up);
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      for (std::size_t c = 0; c < 5; ++c) p.noise[c] = n.value(kInputColumns[c], p.noise[c]);
    }
    if (j.contains("latent")) {
      p.latent_phi = j["latent"].value("phi", p.latent_phi);
      p.latent_std = j["latent"].value("std", p.latent_std);
    }
    p.missing_rate = j.value("missing_rate", p.missing_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("site profile: ") + e.what());
  }
  if (p.days < 1) throw ConfigError("site profile '" + p.name + "': days must be >= 1");
  if (p.hourly_load.size() != 24) throw ConfigError("site profile '" + p.name + "': hourly_load needs 24 values");
  if (p.missing_rate < 0 || p.missing_rate > 0.002) {
    throw ConfigError("site profile '" + p.name + "': missing_rate must lie in [0, 0.002]");
  }
  if (std::abs(p.latent_phi) >= 1.0) throw ConfigError("site profile '" + p.name + "': latent.phi must satisfy |phi| < 1");
  return p;
}

nlohmann::json SiteProfile::to_json() const {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : events) {
    ev.push_back({{"day", e.day}, {"hour", e.hour}, {"duration_hours", e.duration_hours},
                  {"uplink_multiplier", e.uplink_multiplier}});
  }
  nlohmann::json noise_j;
  for (std::size_t c = 0; c < 5; ++c) noise_j[kInputColumns[c]] = noise[c];
  return {{"name", name},
          {"days", days},
          {"start_timestamp", start_timestamp},
          {"hourly_load", hourly_load},
          {"weekend_factor", weekend_factor},
          {"weekend_night", {{"boost", weekend_night_boost}, {"start_hour", night_start_hour}, {"end_hour", night_end_hour}}},
          {"events", ev},
          {"event_rb_up_floor", event_rb_up_floor},
          {"rnti_count", level_json(rnti)},
          {"rb_down", level_json(rb_down)},
          {"rb_up", level_json(rb_up)},
          {"mcs_down", level_json(mcs_down)},
          {"mcs_up", level_json(mcs_up)},
          {"noise", noise_j},
          {"latent", {{"phi", latent_phi}, {"std", latent_std}}},
          {"missing_rate", missing_rate}};
}

SiteProfile load_profile(const std::filesystem::path& path) { return SiteProfile::from_json(read_json(path)); }

std::filesystem::path data_directory() {
  if (const char* env = std::getenv("TRAFFICDTL_DATA_DIR"); env && *env) return env;
  return TRAFFICDTL_DATA_DIR;
}

SiteProfile builtin_profile(const std::string& name) {
  const auto path = data_directory() / "profiles" / (name + ".json");
  if (!std::filesystem::exists(path)) {
    throw ConfigError("unknown site '" + name + "': no profile at " + path.string());
  }
  return load_profile(path);
}

bool in_event(const SiteProfile& profile, std::int64_t timestamp) {
  const double hours = static_cast<double>(timestamp - profile.start_timestamp) / 3600.0;
  return std::any_of(profile.events.begin(), profile.events.end(), [&](const SiteEvent& e) {
    const double start = e.day * 24.0 + e.hour;
    return hours >= start && hours < start + e.duration_hours;
  });
}

std::vector<DciAggregate> generate(const SiteProfile& profile, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t total = static_cast<std::size_t>(profile.days) * kBucketsPerDay;
  const FeatureLevel* levels[5] = {&profile.rnti, &profile.rb_down, &profile.rb_up, &profile.mcs_down, &profile.mcs_up};
  double noise_std[5];
  for (std::size_t c = 0; c < 5; ++c) {
    noise_std[c] = profile.noise[c] * (std::abs(levels[c]->base) + std::abs(levels[c]->peak));
  }

  std::vector<DciAggregate> out;
  out.reserve(total);
  double drift = 0.0;
  for (std::size_t t = 0; t < total; ++t) {
    const std::int64_t ts = profile.start_timestamp + static_cast<std::int64_t>(t) * kBucketSeconds;
    const double hour = static_cast<double>(t % kBucketsPerDay) * kBucketSeconds / 3600.0;
    const std::size_t weekday = (t / kBucketsPerDay) % 7;  // 0 = Monday
    const bool weekend = weekday >= 5;
    // Friday and Saturday nights, including the early hours of the next day.
    const bool late = hour >= profile.night_start_hour && (weekday == 4 || weekday == 5);
    const bool early = hour < profile.night_end_hour && (weekday == 5 || weekday == 6);

    drift = profile.latent_phi * drift + profile.latent_std * gauss(rng);
    double load = template_load(profile.hourly_load, hour) * std::exp(drift);
    if (weekend) load *= profile.weekend_factor;
    if (late || early) load *= profile.weekend_night_boost;

    double v[5];
    for (std::size_t c = 0; c < 5; ++c) v[c] = levels[c]->base + levels[c]->peak * load + noise_std[c] * gauss(rng);

    DciAggregate a;
    a.timestamp = ts;
    a.rnti_count = std::max(0.0, std::round(v[0]));
    a.rb_down = round_to(std::clamp(v[1], 0.0, 100.0), 100.0);
    a.rb_up = round_to(std::clamp(v[2], 0.0, 100.0), 100.0);
    a.mcs_down = round_to(std::clamp(v[3], 0.0, 28.0), 1000.0);
    a.mcs_up = round_to(std::clamp(v[4], 0.0, 28.0), 1000.0);

    if (in_event(profile, ts)) {
      // Uplink bursts: uplink allocation and coding dominate downlink, so the
      // derived uplink throughput exceeds the downlink one bucket by bucket.
      const auto& ev = *std::find_if(profile.events.begin(), profile.events.end(), [&](const SiteEvent& e) {
        const double h = static_cast<double>(ts - profile.start_timestamp) / 3600.0;
        return h >= e.day * 24.0 + e.hour && h < e.day * 24.0 + e.hour + e.duration_hours;
      });
      a.rnti_count = std::round(a.rnti_count * (1.0 + 0.25 * ev.uplink_multiplier));
      a.rb_up = round_to(std::clamp(std::max(a.rb_up * ev.uplink_multiplier, profile.event_rb_up_floor), 1.0, 100.0), 100.0);
      a.rb_down = std::min(a.rb_down, std::floor(a.rb_up * 50.0) / 100.0);
      a.mcs_down = std::min(a.mcs_down, a.mcs_up);
    }

    if (unif(rng) < profile.missing_rate) continue;
    const Throughput thr = derive_throughput(a);
    a.thr_down = thr.down;
    a.thr_up = thr.up;
    out.push_back(a);
  }
  return out;
}

}  // namespace trafficdtl
