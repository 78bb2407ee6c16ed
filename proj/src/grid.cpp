#include "s2sk/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <limits>
#include <set>

#include "s2sk/error.hpp"

namespace s2sk {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double wrap_lon(double lon) {
  double w = std::fmod(lon, 360.0);
  if (w < 0.0) w += 360.0;
  return w;
}

}  // namespace

Date parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse = [&](std::string_view part, auto& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc{} && ptr == part.data() + part.size();
  };
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-' ||
      !parse(iso.substr(0, 4), y) || !parse(iso.substr(5, 2), m) ||
      !parse(iso.substr(8, 2), d)) {
    throw ValidationError("invalid date '" + std::string(iso) + "', expected YYYY-MM-DD");
  }
  const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw ValidationError("invalid calendar date '" + std::string(iso) + "'");
  return date;
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

Date add_days(const Date& d, int days) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

int calendar_slot(const Date& d) {
  using namespace std::chrono;
  const auto jan1 = sys_days{d.year() / January / 1};
  int doy = static_cast<int>((sys_days{d} - jan1).count());  // 0-based
  if (!d.year().is_leap() && doy >= 59) ++doy;
  return doy;
}

std::string_view to_string(Sphere s) {
  switch (s) {
    case Sphere::atmosphere: return "atmosphere";
    case Sphere::ocean: return "ocean";
    case Sphere::land: return "land";
    case Sphere::flux: return "flux";
  }
  return "atmosphere";
}

Sphere parse_sphere(std::string_view s) {
  if (s == "atmosphere") return Sphere::atmosphere;
  if (s == "ocean") return Sphere::ocean;
  if (s == "land") return Sphere::land;
  if (s == "flux") return Sphere::flux;
  throw ValidationError("unknown sphere tag '" + std::string(s) + "'");
}

GridSpec GridSpec::fine() { return GridSpec{}; }

GridSpec GridSpec::desk() { return GridSpec{31, 60, 90.0, -6.0, 0.0, 6.0}; }

GridSpec GridSpec::latent() { return GridSpec{30, 60, 87.0, -6.0, 3.0, 6.0}; }

double GridSpec::lon(std::size_t j) const {
  return wrap_lon(lon_start_deg + lon_step_deg * j);
}

void GridSpec::validate() const {
  if (n_lat < 2 || n_lon < 2) throw ValidationError("grid needs at least 2 x 2 points");
  const double first = lat(0), last = lat(n_lat - 1);
  const double tol = 1e-9;
  if (std::abs(first) > 90.0 + tol || std::abs(last) > 90.0 + tol)
    throw ValidationError("grid latitudes leave [-90, 90]");
  if (lat_step_deg == 0.0 || lon_step_deg == 0.0)
    throw ValidationError("grid steps must be non-zero");
}

std::size_t FieldSet::channel_index(std::string_view name) const {
  for (std::size_t c = 0; c < channels.size(); ++c)
    if (channels[c].name == name) return c;
  throw ValidationError("unknown channel '" + std::string(name) + "'");
}

void FieldSet::validate() const {
  grid.validate();
  const Shape want{channels.size(), grid.n_lat, grid.n_lon};
  if (values.shape() != want)
    throw ValidationError("field values " + shape_string(values.shape()) +
                          " do not match " + shape_string(want));
  std::set<std::string> names;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& ch = channels[c];
    if (!names.insert(ch.name).second)
      throw ValidationError("duplicate channel name '" + ch.name + "'");
    if (ch.valid && ch.valid->size() != grid.cells())
      throw ValidationError("mask of channel '" + ch.name + "' has wrong size");
    const auto slab = channel(c);
    for (std::size_t k = 0; k < slab.size(); ++k) {
      if (ch.valid && !(*ch.valid)[k]) continue;
      if (!std::isfinite(slab[k]))
        throw ValidationError("non-finite value in channel '" + ch.name + "'");
    }
  }
}

FieldSet zeros_like(const FieldSet& x) {
  FieldSet out{x.grid, x.channels, Tensor(x.values.shape(), 0.0), x.valid_time};
  return out;
}

void require_compatible(const FieldSet& a, const FieldSet& b, std::string_view what) {
  if (!(a.grid == b.grid))
    throw ValidationError(std::string(what) + ": grid mismatch");
  if (a.channels.size() != b.channels.size())
    throw ValidationError(std::string(what) + ": channel count mismatch");
  for (std::size_t c = 0; c < a.channels.size(); ++c)
    if (!a.channels[c].same_identity(b.channels[c]))
      throw ValidationError(std::string(what) + ": channel '" + a.channels[c].name +
                            "' does not match '" + b.channels[c].name + "'");
}

std::vector<std::size_t> block_channels(const std::vector<Channel>& channels, bool boundary) {
  std::vector<std::size_t> idx;
  for (std::size_t c = 0; c < channels.size(); ++c)
    if (is_boundary(channels[c].sphere) == boundary) idx.push_back(c);
  return idx;
}

FieldSet select_channels(const FieldSet& x, std::span<const std::size_t> indices) {
  FieldSet out;
  out.grid = x.grid;
  out.valid_time = x.valid_time;
  out.values = Tensor({indices.size(), x.grid.n_lat, x.grid.n_lon});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t c = indices[k];
    if (c >= x.channels.size()) throw ValidationError("channel index out of range");
    out.channels.push_back(x.channels[c]);
    std::ranges::copy(x.channel(c), out.values.slab(k).begin());
  }
  return out;
}

std::vector<double> latitude_weights(std::span<const double> lats_deg) {
  if (lats_deg.empty()) throw ValidationError("latitude weights need at least one latitude");
  std::vector<double> w(lats_deg.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::max(0.0, std::cos(lats_deg[i] * kDegToRad));
    sum += w[i];
  }
  if (!(sum > 0.0)) throw ValidationError("all latitude weights are zero");
  const double m = sum / static_cast<double>(w.size());
  for (double& v : w) v /= m;
  return w;
}

std::vector<double> latitude_weights(const GridSpec& grid) {
  grid.validate();
  std::vector<double> lats(grid.n_lat);
  for (std::size_t i = 0; i < grid.n_lat; ++i) lats[i] = grid.lat(i);
  return latitude_weights(lats);
}

std::vector<double> cell_weights(const GridSpec& grid, const Mask* valid) {
  const auto lat_w = latitude_weights(grid);
  std::vector<double> w(grid.cells(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < grid.n_lat; ++i) {
    for (std::size_t j = 0; j < grid.n_lon; ++j) {
      const std::size_t k = i * grid.n_lon + j;
      if (valid && !(*valid)[k]) continue;
      w[k] = lat_w[i];
      sum += lat_w[i];
    }
  }
  if (!(sum > 0.0)) throw ValidationError("no valid cells with positive weight");
  for (double& v : w) v /= sum;
  return w;
}

double weighted_mean(std::span<const double> cell_w, std::span<const double> slab) {
  double acc = 0.0;
  for (std::size_t k = 0; k < slab.size(); ++k)
    if (cell_w[k] != 0.0) acc += cell_w[k] * slab[k];
  return acc;
}

std::span<const double> Climatology::day(int slot, std::size_t channel) const {
  const std::size_t cells = grid.cells();
  const std::size_t offset = (static_cast<std::size_t>(slot) * channels.size() + channel) * cells;
  return mean.values().subspan(offset, cells);
}

void ClimatologyBuilder::add(const FieldSet& sample) {
  if (total_ == 0) {
    sample.grid.validate();
    grid_ = sample.grid;
    channels_ = sample.channels;
    sums_.assign(kCalendarSlots * channels_.size() * grid_.cells(), 0.0);
    min_year_ = max_year_ = static_cast<int>(sample.valid_time.year());
  } else {
    FieldSet probe{grid_, channels_, {}, {}};
    require_compatible(probe, sample, "climatology sample");
  }
  if (sample.values.shape() != Shape{channels_.size(), grid_.n_lat, grid_.n_lon})
    throw ValidationError("climatology sample has the wrong shape");
  const int slot = calendar_slot(sample.valid_time);
  const std::size_t block = channels_.size() * grid_.cells();
  double* dst = sums_.data() + static_cast<std::size_t>(slot) * block;
  const double* src = sample.values.data();
  for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
  ++counts_[slot];
  ++total_;
  const int year = static_cast<int>(sample.valid_time.year());
  min_year_ = std::min(min_year_, year);
  max_year_ = std::max(max_year_, year);
}

Climatology ClimatologyBuilder::finish(int halfwidth) const {
  if (total_ == 0) throw ValidationError("climatology needs at least one sample");
  if (halfwidth < 0) throw ValidationError("climatology halfwidth must be >= 0");
  const std::size_t block = channels_.size() * grid_.cells();
  Climatology clim;
  clim.grid = grid_;
  clim.channels = channels_;
  clim.mean = Tensor({static_cast<std::size_t>(kCalendarSlots), channels_.size(),
                      grid_.n_lat, grid_.n_lon});
  clim.start_year = min_year_;
  clim.end_year = max_year_;
  clim.window_halfwidth_days = halfwidth;

  const int span = std::min(2 * halfwidth + 1, kCalendarSlots);
  std::vector<double> acc(block);
  for (int d = 0; d < kCalendarSlots; ++d) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::size_t count = 0;
    // Fixed summation order: slots d - halfwidth ... d + halfwidth.
    for (int k = 0; k < span; ++k) {
      const int s = ((d - halfwidth + k) % kCalendarSlots + kCalendarSlots) % kCalendarSlots;
      if (counts_[s] == 0) continue;
      const double* src = sums_.data() + static_cast<std::size_t>(s) * block;
      for (std::size_t i = 0; i < block; ++i) acc[i] += src[i];
      count += counts_[s];
    }
    if (count == 0)
      throw ValidationError("climatology window for calendar slot " + std::to_string(d) +
                            " (day-of-year " + std::to_string(d + 1) + ") is empty");
    auto out = clim.mean.slab(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < block; ++i) out[i] = acc[i] / static_cast<double>(count);
  }
  // Masked cells have no climatology.
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto& valid = channels_[c].valid;
    if (!valid) continue;
    for (int d = 0; d < kCalendarSlots; ++d) {
      auto out = clim.mean.slab(static_cast<std::size_t>(d)).subspan(c * grid_.cells(), grid_.cells());
      for (std::size_t k = 0; k < out.size(); ++k)
        if (!(*valid)[k]) out[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return clim;
}

Climatology build_climatology(std::span<const FieldSet> samples, int halfwidth) {
  ClimatologyBuilder builder;
  for (const auto& s : samples) builder.add(s);
  return builder.finish(halfwidth);
}

FieldSet anomaly(const FieldSet& x, const Climatology& clim) {
  FieldSet probe{clim.grid, clim.channels, {}, {}};
  require_compatible(probe, x, "anomaly");
  if (x.values.shape() != Shape{clim.channels.size(), clim.grid.n_lat, clim.grid.n_lon})
    throw ValidationError("anomaly input has the wrong shape");
  const int slot = calendar_slot(x.valid_time);
  FieldSet out = x;
  for (std::size_t c = 0; c < x.channels.size(); ++c) {
    const auto ref = clim.day(slot, c);
    auto dst = out.channel(c);
    const auto& valid = x.channels[c].valid;
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (valid && !(*valid)[k]) continue;
      if (!std::isfinite(ref[k]))
        throw ValidationError("climatology has no entry for calendar slot " +
                              std::to_string(slot) + " channel '" + x.channels[c].name + "'");
      dst[k] -= ref[k];
    }
  }
  return out;
}

double great_circle_km(LatLon p1, LatLon p2) {
  const double phi1 = p1.lat * kDegToRad, phi2 = p2.lat * kDegToRad;
  const double dphi = phi2 - phi1;
  const double dlambda = (p2.lon - p1.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

void RegionBox::validate() const {
  if (!(lat_min < lat_max)) throw ValidationError("region needs lat_min < lat_max");
  if (lat_min < -90.0 || lat_max > 90.0) throw ValidationError("region latitudes leave [-90, 90]");
}

bool RegionBox::contains(LatLon p) const {
  constexpr double tol = 1e-9;
  if (p.lat < lat_min - tol || p.lat > lat_max + tol) return false;
  if (lon_max - lon_min >= 360.0 - tol) return true;
  const double lon = wrap_lon(p.lon);
  const double lo = wrap_lon(lon_min);
  double hi = wrap_lon(lon_max);
  if (hi == 0.0 && lon_max > lon_min) hi = 360.0;
  if (lo <= hi) return lon >= lo - tol && lon <= hi + tol;
  return lon >= lo - tol || lon <= hi + tol;
}

Mask region_mask(const GridSpec& grid, const RegionBox& box) {
  grid.validate();
  box.validate();
  Mask mask(grid.cells(), 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < grid.n_lat; ++i)
    for (std::size_t j = 0; j < grid.n_lon; ++j)
      if (box.contains({grid.lat(i), grid.lon(j)})) {
        mask[i * grid.n_lon + j] = 1;
        ++count;
      }
  if (count == 0) throw ValidationError("region box contains no grid cell");
  return mask;
}

}  // namespace s2sk
