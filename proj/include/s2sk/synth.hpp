#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "s2sk/grid.hpp"
#include "s2sk/rng.hpp"

namespace s2sk {

struct ChannelSpec {
  std::string name;
  Sphere sphere = Sphere::atmosphere;
  bool ocean_only = false;  // carries the land mask (SST, SIC)
};

inline constexpr int kPressureLevels[] = {50, 100, 150, 200, 250, 300, 400, 500, 600, 700, 850, 925, 1000};

// "full": Q/T/U/V/Z on 13 pressure levels, six surface fields, SST, SIC,
// three soil temperature and moisture layers, and two surface fluxes (81).
// "compact": the same families on 500 and 850 hPa with one layer per
// boundary family (21).
std::vector<ChannelSpec> channel_inventory(std::string_view name);

// Deterministic land mask: 1 over land. Ocean-only channels are valid where
// this is 0.
Mask land_mask(const GridSpec& grid);

// Channels with masks attached, ready for FieldSet.
std::vector<Channel> make_channels(const std::vector<ChannelSpec>& specs, const GridSpec& grid);

struct SphereDynamics {
  double seasonal_amplitude = 1.0;
  double wave_amplitude = 0.5;
  int wave_number = 3;
  double wave_speed_deg_per_day = 6.0;  // eastward phase speed
  double noise_std = 1.0;               // stationary standard deviation of the AR(1) part
  double ar1 = 0.7;
};

// Boundary channel `driver` leads atmospheric channel `target` by `lag_days`:
// target gains gain * (driver noise lag_days earlier).
struct CouplingLink {
  std::string driver;
  std::string target;
  int lag_days = 5;
  double gain = 0.8;
};

struct SynthConfig {
  GridSpec grid = GridSpec::desk();
  std::string inventory = "full";
  Date start = Date{std::chrono::year{2000}, std::chrono::month{1}, std::chrono::day{1}};
  std::uint64_t seed = 0;
  SphereDynamics atmosphere{1.0, 0.5, 3, 6.0, 1.0, 0.7};
  SphereDynamics ocean{0.5, 0.1, 2, 1.0, 0.5, 0.98};
  SphereDynamics land{0.8, 0.1, 2, 1.0, 0.5, 0.95};
  SphereDynamics flux{0.6, 0.2, 3, 3.0, 0.6, 0.8};
  std::vector<CouplingLink> couplings{{"SM1", "T2M", 5, 0.8}, {"SST", "MSLP", 10, 0.6}};

  const SphereDynamics& dynamics(Sphere s) const;
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static SynthConfig from_json(const nlohmann::json& j);
};

// Streaming generator. Each channel is
//   seasonal_amplitude * cos(2 pi ((day - 196) mod 365) / 365) * sin(lat)
//   + wave_amplitude * cos(k * lon - k * speed * day + phase) * cos(lat)
//   + AR(1) noise + sum over links of gain * driver noise(day - lag),
// where day counts from 2000-01-01. Each channel's noise has its own rng
// stream, so changing the inventory does not change other channels.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SynthConfig config);

  FieldSet next();
  int days_generated() const { return produced_; }
  const std::vector<Channel>& channels() const { return channels_; }
  const SynthConfig& config() const { return config_; }

  // Seasonal plus wave part of channel c at `date`, one value per cell.
  std::vector<double> deterministic(std::size_t c, Date date) const;

 private:
  SynthConfig config_;
  std::vector<ChannelSpec> specs_;
  std::vector<Channel> channels_;
  std::vector<Rng> rngs_;
  std::vector<double> phase_;
  std::vector<std::deque<std::vector<double>>> noise_;  // per channel, newest last
  struct Link {
    std::size_t driver;
    std::size_t target;
    int lag;
    double gain;
  };
  std::vector<Link> links_;
  std::size_t history_ = 1;
  int produced_ = 0;

  void advance_noise();
};

std::vector<FieldSet> generate_synthetic(const SynthConfig& config, int n_days);

}  // namespace s2sk
