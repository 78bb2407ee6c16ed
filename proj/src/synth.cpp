#include "s2sk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s2sk/error.hpp"

namespace s2sk {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

const char* kUpperAir[] = {"Q", "T", "U", "V", "Z"};
const char* kSurface[] = {"T2M", "OLR", "TP", "MSLP", "U10", "V10"};

int days_from_epoch(Date d) {
  using namespace std::chrono;
  const Date epoch{year{2000}, month{1}, day{1}};
  return static_cast<int>((sys_days{d} - sys_days{epoch}).count());
}

SphereDynamics dynamics_from_json(const nlohmann::json& j, SphereDynamics d) {
  d.seasonal_amplitude = j.value("seasonal_amplitude", d.seasonal_amplitude);
  d.wave_amplitude = j.value("wave_amplitude", d.wave_amplitude);
  d.wave_number = j.value("wave_number", d.wave_number);
  d.wave_speed_deg_per_day = j.value("wave_speed_deg_per_day", d.wave_speed_deg_per_day);
  d.noise_std = j.value("noise_std", d.noise_std);
  d.ar1 = j.value("ar1", d.ar1);
  return d;
}

nlohmann::json dynamics_to_json(const SphereDynamics& d) {
  return {{"seasonal_amplitude", d.seasonal_amplitude}, {"wave_amplitude", d.wave_amplitude},
          {"wave_number", d.wave_number},               {"wave_speed_deg_per_day", d.wave_speed_deg_per_day},
          {"noise_std", d.noise_std},                   {"ar1", d.ar1}};
}

}  // namespace

std::vector<ChannelSpec> channel_inventory(std::string_view name) {
  std::vector<ChannelSpec> out;
  if (name == "full") {
    for (const char* v : kUpperAir)
      for (int level : kPressureLevels) out.push_back({std::string(v) + std::to_string(level), Sphere::atmosphere});
    for (const char* s : kSurface) out.push_back({s, Sphere::atmosphere});
    out.push_back({"SST", Sphere::ocean, true});
    out.push_back({"SIC", Sphere::ocean, true});
    for (int l = 1; l <= 3; ++l) out.push_back({"ST" + std::to_string(l), Sphere::land});
    for (int l = 1; l <= 3; ++l) out.push_back({"SM" + std::to_string(l), Sphere::land});
    out.push_back({"LHF", Sphere::flux});
    out.push_back({"SHF", Sphere::flux});
  } else if (name == "compact") {
    for (const char* v : kUpperAir)
      for (int level : {500, 850}) out.push_back({std::string(v) + std::to_string(level), Sphere::atmosphere});
    for (const char* s : kSurface) out.push_back({s, Sphere::atmosphere});
    out.push_back({"SST", Sphere::ocean, true});
    out.push_back({"SIC", Sphere::ocean, true});
    out.push_back({"ST1", Sphere::land});
    out.push_back({"SM1", Sphere::land});
    out.push_back({"LHF", Sphere::flux});
  } else {
    throw ValidationError("unknown channel inventory '" + std::string(name) + "' (expected full or compact)");
  }
  return out;
}

Mask land_mask(const GridSpec& grid) {
  Mask m(grid.cells(), 0);
  for (std::size_t i = 0; i < grid.n_lat; ++i) {
    const double lat = grid.lat(i);
    for (std::size_t j = 0; j < grid.n_lon; ++j) {
      const double lon = grid.lon(j);
      const double blob = std::sin(2.0 * lon * kDegToRad) * std::cos(1.5 * lat * kDegToRad);
      m[i * grid.n_lon + j] = (lat < -70.0 || blob > 0.45) ? 1 : 0;
    }
  }
  return m;
}

std::vector<Channel> make_channels(const std::vector<ChannelSpec>& specs, const GridSpec& grid) {
  std::shared_ptr<const Mask> ocean;
  std::vector<Channel> out;
  for (const auto& s : specs) {
    Channel c{s.name, s.sphere, nullptr};
    if (s.ocean_only) {
      if (!ocean) {
        Mask land = land_mask(grid);
        for (auto& v : land) v = v ? 0 : 1;
        ocean = std::make_shared<const Mask>(std::move(land));
      }
      c.valid = ocean;
    }
    out.push_back(std::move(c));
  }
  return out;
}

const SphereDynamics& SynthConfig::dynamics(Sphere s) const {
  switch (s) {
    case Sphere::atmosphere: return atmosphere;
    case Sphere::ocean: return ocean;
    case Sphere::land: return land;
    case Sphere::flux: return flux;
  }
  return atmosphere;
}

void SynthConfig::validate() const {
  grid.validate();
  const auto specs = channel_inventory(inventory);
  for (Sphere s : {Sphere::atmosphere, Sphere::ocean, Sphere::land, Sphere::flux}) {
    const auto& d = dynamics(s);
    if (!(d.ar1 >= 0.0 && d.ar1 < 1.0))
      throw ValidationError("AR(1) coefficient for " + std::string(to_string(s)) + " must lie in [0, 1)");
    if (!(d.noise_std >= 0.0)) throw ValidationError("noise_std must be non-negative");
    if (d.wave_number < 0) throw ValidationError("wave_number must be non-negative");
  }
  auto find = [&](const std::string& n) {
    const auto it = std::find_if(specs.begin(), specs.end(), [&](const ChannelSpec& c) { return c.name == n; });
    if (it == specs.end()) throw ValidationError("coupling channel '" + n + "' is not in the inventory");
    return *it;
  };
  for (const auto& l : couplings) {
    if (l.lag_days < 0) throw ValidationError("coupling lag must be >= 0");
    if (!std::isfinite(l.gain)) throw ValidationError("coupling gain must be finite");
    if (!is_boundary(find(l.driver).sphere)) throw ValidationError("coupling driver '" + l.driver + "' is not a boundary channel");
    if (is_boundary(find(l.target).sphere)) throw ValidationError("coupling target '" + l.target + "' is not atmospheric");
  }
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : couplings)
    links.push_back({{"driver", l.driver}, {"target", l.target}, {"lag_days", l.lag_days}, {"gain", l.gain}});
  return {{"grid",
           {{"n_lat", grid.n_lat}, {"n_lon", grid.n_lon}, {"lat_start_deg", grid.lat_start_deg},
            {"lat_step_deg", grid.lat_step_deg}, {"lon_start_deg", grid.lon_start_deg},
            {"lon_step_deg", grid.lon_step_deg}}},
          {"inventory", inventory},
          {"start", format_date(start)},
          {"seed", seed},
          {"atmosphere", dynamics_to_json(atmosphere)},
          {"ocean", dynamics_to_json(ocean)},
          {"land", dynamics_to_json(land)},
          {"flux", dynamics_to_json(flux)},
          {"couplings", links}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.is_string()) {
        const auto name = g.get<std::string>();
        if (name == "desk") c.grid = GridSpec::desk();
        else if (name == "fine") c.grid = GridSpec::fine();
        else throw ValidationError("unknown grid '" + name + "' (expected desk or fine)");
      } else {
        c.grid.n_lat = g.value("n_lat", c.grid.n_lat);
        c.grid.n_lon = g.value("n_lon", c.grid.n_lon);
        c.grid.lat_start_deg = g.value("lat_start_deg", c.grid.lat_start_deg);
        c.grid.lat_step_deg = g.value("lat_step_deg", c.grid.lat_step_deg);
        c.grid.lon_start_deg = g.value("lon_start_deg", c.grid.lon_start_deg);
        c.grid.lon_step_deg = g.value("lon_step_deg", c.grid.lon_step_deg);
      }
    }
    c.inventory = j.value("inventory", c.inventory);
    if (j.contains("start")) c.start = parse_date(j.at("start").get<std::string>());
    c.seed = j.value("seed", c.seed);
    if (j.contains("atmosphere")) c.atmosphere = dynamics_from_json(j.at("atmosphere"), c.atmosphere);
    if (j.contains("ocean")) c.ocean = dynamics_from_json(j.at("ocean"), c.ocean);
    if (j.contains("land")) c.land = dynamics_from_json(j.at("land"), c.land);
    if (j.contains("flux")) c.flux = dynamics_from_json(j.at("flux"), c.flux);
    if (j.contains("couplings")) {
      c.couplings.clear();
      for (const auto& l : j.at("couplings"))
        c.couplings.push_back({l.at("driver").get<std::string>(), l.at("target").get<std::string>(),
                               l.value("lag_days", 5), l.value("gain", 0.8)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

SyntheticGenerator::SyntheticGenerator(SynthConfig config) : config_(std::move(config)) {
  config_.validate();
  specs_ = channel_inventory(config_.inventory);
  channels_ = make_channels(specs_, config_.grid);
  for (const auto& s : specs_) {
    rngs_.emplace_back(derive_seed(config_.seed, stream_id("synth/noise/" + s.name)));
    // Phase in [0, 2 pi) from the channel name, independent of the seed.
    phase_.push_back(2.0 * std::numbers::pi * static_cast<double>(stream_id(s.name) % 3600) / 3600.0);
  }
  auto index = [&](const std::string& n) {
    return static_cast<std::size_t>(
        std::find_if(specs_.begin(), specs_.end(), [&](const ChannelSpec& c) { return c.name == n; }) -
        specs_.begin());
  };
  for (const auto& l : config_.couplings) {
    links_.push_back({index(l.driver), index(l.target), l.lag_days, l.gain});
    history_ = std::max(history_, static_cast<std::size_t>(l.lag_days) + 1);
  }

  // Stationary start, then spin up so every lag has history.
  const std::size_t cells = config_.grid.cells();
  noise_.resize(specs_.size());
  for (std::size_t c = 0; c < specs_.size(); ++c) {
    const double sd = config_.dynamics(specs_[c].sphere).noise_std;
    std::vector<double> n(cells);
    for (double& v : n) v = sd * rngs_[c].normal();
    noise_[c].push_back(std::move(n));
  }
  for (std::size_t k = 1; k < history_; ++k) advance_noise();
}

void SyntheticGenerator::advance_noise() {
  const std::size_t cells = config_.grid.cells();
  for (std::size_t c = 0; c < specs_.size(); ++c) {
    const auto& d = config_.dynamics(specs_[c].sphere);
    const double innov = d.noise_std * std::sqrt(1.0 - d.ar1 * d.ar1);
    const std::vector<double>& last = noise_[c].back();
    std::vector<double> n(cells);
    for (std::size_t k = 0; k < cells; ++k) n[k] = d.ar1 * last[k] + innov * rngs_[c].normal();
    noise_[c].push_back(std::move(n));
    if (noise_[c].size() > history_) noise_[c].pop_front();
  }
}

std::vector<double> SyntheticGenerator::deterministic(std::size_t c, Date date) const {
  if (c >= specs_.size()) throw ValidationError("synthetic channel index out of range");
  const auto& g = config_.grid;
  const auto& d = config_.dynamics(specs_[c].sphere);
  const int day = days_from_epoch(date);
  const int phase_day = ((day - 196) % 365 + 365) % 365;
  const double season = std::cos(2.0 * std::numbers::pi * static_cast<double>(phase_day) / 365.0);
  const double k = static_cast<double>(d.wave_number);
  const double shift = k * d.wave_speed_deg_per_day * static_cast<double>(day) * kDegToRad;
  std::vector<double> out(g.cells());
  for (std::size_t i = 0; i < g.n_lat; ++i) {
    const double lat = g.lat(i) * kDegToRad;
    const double seasonal = d.seasonal_amplitude * season * std::sin(lat);
    for (std::size_t j = 0; j < g.n_lon; ++j) {
      double v = seasonal;
      if (d.wave_amplitude != 0.0)
        v += d.wave_amplitude * std::cos(k * g.lon(j) * kDegToRad - shift + phase_[c]) * std::cos(lat);
      out[i * g.n_lon + j] = v;
    }
  }
  return out;
}

FieldSet SyntheticGenerator::next() {
  if (produced_ > 0) advance_noise();
  const Date date = add_days(config_.start, produced_);
  const auto& g = config_.grid;
  FieldSet out{g, channels_, Tensor({specs_.size(), g.n_lat, g.n_lon}), date};
  for (std::size_t c = 0; c < specs_.size(); ++c) {
    auto dst = out.channel(c);
    const auto det = deterministic(c, date);
    const auto& noise = noise_[c].back();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = det[k] + noise[k];
  }
  for (const auto& l : links_) {
    const auto& driver = noise_[l.driver][noise_[l.driver].size() - 1 - static_cast<std::size_t>(l.lag)];
    auto dst = out.channel(l.target);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += l.gain * driver[k];
  }
  for (std::size_t c = 0; c < specs_.size(); ++c) {
    if (!channels_[c].valid) continue;
    const Mask& valid = *channels_[c].valid;
    auto dst = out.channel(c);
    for (std::size_t k = 0; k < dst.size(); ++k)
      if (!valid[k]) dst[k] = std::numeric_limits<double>::quiet_NaN();
  }
  ++produced_;
  return out;
}

std::vector<FieldSet> generate_synthetic(const SynthConfig& config, int n_days) {
  if (n_days < 1) throw ValidationError("synthetic series needs n_days >= 1");
  SyntheticGenerator gen(config);
  std::vector<FieldSet> out;
  out.reserve(static_cast<std::size_t>(n_days));
  for (int d = 0; d < n_days; ++d) out.push_back(gen.next());
  return out;
}

}  // namespace s2sk
