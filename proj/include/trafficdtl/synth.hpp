#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "trafficdtl/dataset.hpp"

namespace trafficdtl {

/// Uplink-heavy period, e.g. a stadium event.
struct SiteEvent {
  int day = 0;                  // zero-based day offset from the first bucket
  double hour = 0;              // start hour of day
  double duration_hours = 0;
  double uplink_multiplier = 1;
};

/// Affine level of one feature: base + peak x load.
struct FeatureLevel {
  double base = 0;
  double peak = 0;
};

struct SiteProfile {
  std::string name;
  int days = 1;
  std::int64_t start_timestamp = 1551657600;  // a Monday, 00:00 UTC
  std::vector<double> hourly_load;            // 24 fractions of peak load
  double weekend_factor = 1.0;
  double weekend_night_boost = 1.0;           // multiplier on Friday/Saturday nights
  double night_start_hour = 22.0, night_end_hour = 5.0;
  std::vector<SiteEvent> events;
  double event_rb_up_floor = 50.0;
  FeatureLevel rnti, rb_down, rb_up;
  FeatureLevel mcs_down{24, -8}, mcs_up{20, -6};  // MCS falls as load rises
  /// Gaussian noise std as a fraction of each feature's base + |peak|, in
  /// kInputColumns order.
  std::array<double, 5> noise{0.05, 0.05, 0.1, 0.03, 0.05};
  double latent_phi = 0.98;  // AR(1) coefficient of the log-load drift
  double latent_std = 0.03;
  double missing_rate = 0.001;

  static SiteProfile from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

SiteProfile load_profile(const std::filesystem::path& path);
/// Shipped profile by name (PS, EB, LC) from the data directory. The directory
/// is $TRAFFICDTL_DATA_DIR when set, otherwise the source tree's data/.
SiteProfile builtin_profile(const std::string& name);
std::filesystem::path data_directory();

/// True when the timestamp falls inside one of the profile's events.
bool in_event(const SiteProfile& profile, std::int64_t timestamp);

/// Two-minute series of days x 720 buckets minus randomly dropped ones.
/// Values are rounded to the CSV precision so a write/read round trip is exact.
std::vector<DciAggregate> generate(const SiteProfile& profile, std::uint64_t seed);

}  // namespace trafficdtl
