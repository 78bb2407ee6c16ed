#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2sk/tensor.hpp"

namespace s2sk {

using Date = std::chrono::year_month_day;

Date parse_date(std::string_view iso);  // YYYY-MM-DD
std::string format_date(const Date& d);
Date add_days(const Date& d, int days);

// Number of slots on the circular calendar axis. Slot 59 is Feb 29; in
// non-leap years dates from Mar 1 onwards skip it.
inline constexpr int kCalendarSlots = 366;
int calendar_slot(const Date& d);

enum class Sphere { atmosphere, ocean, land, flux };

std::string_view to_string(Sphere s);
Sphere parse_sphere(std::string_view s);

// Atmospheric channels form the A-block; ocean, land and flux the B-block.
inline bool is_boundary(Sphere s) { return s != Sphere::atmosphere; }

// A cell-validity mask over [n_lat * n_lon]; 1 marks a valid cell.
using Mask = std::vector<std::uint8_t>;

struct Channel {
  std::string name;
  Sphere sphere = Sphere::atmosphere;
  // Null when every cell is valid. Ocean-only channels carry a land mask.
  std::shared_ptr<const Mask> valid;

  bool masked() const { return valid != nullptr; }
  bool same_identity(const Channel& o) const {
    return name == o.name && sphere == o.sphere;
  }
};

struct GridSpec {
  std::size_t n_lat = 121;
  std::size_t n_lon = 240;
  double lat_start_deg = 90.0;
  double lat_step_deg = -1.5;
  double lon_start_deg = 0.0;
  double lon_step_deg = 1.5;

  // 1.5 degree global grid, 121 x 240.
  static GridSpec fine();
  // 6 degree global grid, 31 x 60, for desk-scale runs.
  static GridSpec desk();
  // 30 x 60 latent grid of cell centres at 6 degree spacing.
  static GridSpec latent();

  double lat(std::size_t i) const { return lat_start_deg + lat_step_deg * i; }
  double lon(std::size_t j) const;
  std::size_t cells() const { return n_lat * n_lon; }
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

struct FieldSet {
  GridSpec grid;
  std::vector<Channel> channels;
  Tensor values;  // [channel, n_lat, n_lon]
  Date valid_time{};

  std::size_t channel_count() const { return channels.size(); }
  std::size_t channel_index(std::string_view name) const;
  std::span<const double> channel(std::size_t c) const { return values.slab(c); }
  std::span<double> channel(std::size_t c) { return values.slab(c); }

  // Shape, unique names, finiteness of every valid cell.
  void validate() const;
};

// A FieldSet with the same grid/channels/time and zero values.
FieldSet zeros_like(const FieldSet& x);

// Grid and channel identity (names, spheres) must match; throws otherwise.
void require_compatible(const FieldSet& a, const FieldSet& b, std::string_view what);

// Channel indices of the atmosphere block (A) and the boundary block (B).
std::vector<std::size_t> block_channels(const std::vector<Channel>& channels, bool boundary);
FieldSet select_channels(const FieldSet& x, std::span<const std::size_t> indices);

// Latitude weights cos(lat) normalised to mean 1 over latitudes.
std::vector<double> latitude_weights(std::span<const double> lats_deg);
std::vector<double> latitude_weights(const GridSpec& grid);

// Per-cell weights over a [n_lat * n_lon] slab, normalised to sum 1 over
// valid cells. Masked cells get weight 0.
std::vector<double> cell_weights(const GridSpec& grid, const Mask* valid);

// Weighted mean of a [n_lat * n_lon] slab with cell_weights().
double weighted_mean(std::span<const double> cell_w, std::span<const double> slab);

struct Climatology {
  GridSpec grid;
  std::vector<Channel> channels;
  Tensor mean;  // [366, channel, n_lat, n_lon]
  int start_year = 0;
  int end_year = 0;
  int window_halfwidth_days = 15;

  std::span<const double> day(int slot, std::size_t channel) const;
};

// Accumulates per-slot sums so climatologies can be built from streamed data.
class ClimatologyBuilder {
 public:
  void add(const FieldSet& sample);
  Climatology finish(int halfwidth) const;
  std::size_t sample_count() const { return total_; }

 private:
  GridSpec grid_;
  std::vector<Channel> channels_;
  std::vector<double> sums_;  // [366, channel, cell]
  std::vector<std::size_t> counts_ = std::vector<std::size_t>(kCalendarSlots, 0);
  std::size_t total_ = 0;
  int min_year_ = 0;
  int max_year_ = 0;
};

Climatology build_climatology(std::span<const FieldSet> samples, int halfwidth);

FieldSet anomaly(const FieldSet& x, const Climatology& clim);

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0;

double great_circle_km(LatLon p1, LatLon p2);

struct RegionBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = 0.0;  // when lon_min > lon_max the box wraps across 0
  double lon_max = 360.0;

  void validate() const;
  bool contains(LatLon p) const;
};

Mask region_mask(const GridSpec& grid, const RegionBox& box);

}  // namespace s2sk
