#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "s2sk/error.hpp"
#include "s2sk/grid.hpp"
#include "s2sk/parallel.hpp"
#include "s2sk/rng.hpp"
#include "s2sk/stats.hpp"
#include "s2sk/tensor.hpp"

using namespace s2sk;

namespace {

FieldSet constant_field(const GridSpec& g, std::vector<Channel> ch, Date d, double v) {
  return FieldSet{g, ch, Tensor({ch.size(), g.n_lat, g.n_lon}, v), d};
}

GridSpec small_grid() {
  GridSpec g;
  g.n_lat = 3;
  g.n_lon = 4;
  g.lat_start_deg = 30.0;
  g.lat_step_deg = -30.0;
  g.lon_start_deg = 0.0;
  g.lon_step_deg = 90.0;
  return g;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    (void)c;
  }
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(stream_id("rollout/member") != stream_id("rollout/members"));
}

TEST_CASE("rng normal has unit moments") {
  Rng r(7);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  const double v = s2 / n - m * m;
  CHECK(std::abs(m) < 4.0 / std::sqrt(n));
  CHECK(std::abs(v - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("rng index is unbiased and in range") {
  Rng r(9);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto k = r.index(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  // Chi-square with 6 dof; 22.46 is the 0.1% critical value.
  double chi = 0.0;
  for (int c : counts) chi += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  CHECK(chi < 22.46);
}

TEST_CASE("tensor shape, slabs and fingerprints") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.slab_size() == 12);
  t.at(1, 2, 3) = 9.0;
  CHECK(t.slab(1)[11] == 9.0);
  CHECK(shape_string(t.shape()) == "[2x3x4]");
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ValidationError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ValidationError);
  Tensor u = t;
  CHECK(u.bitwise_equal(t));
  CHECK(fingerprint(u) == fingerprint(t));
  u[0] = std::nextafter(u[0], 2.0);
  CHECK_FALSE(u.bitwise_equal(t));
  CHECK(fingerprint(u) != fingerprint(t));
  CHECK(fingerprint(t.reshaped({6, 4})) != fingerprint(t));
  t[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("dates and calendar slots") {
  CHECK(format_date(parse_date("2001-03-01")) == "2001-03-01");
  CHECK(calendar_slot(parse_date("2001-01-01")) == 0);
  CHECK(calendar_slot(parse_date("2000-02-29")) == 59);
  CHECK(calendar_slot(parse_date("2001-03-01")) == 60);
  CHECK(calendar_slot(parse_date("2000-03-01")) == 60);
  CHECK(calendar_slot(parse_date("2001-12-31")) == 365);
  CHECK(format_date(add_days(parse_date("2000-02-28"), 2)) == "2000-03-01");
  CHECK_THROWS_AS(parse_date("2001-02-30"), ValidationError);
  CHECK_THROWS_AS(parse_date("yesterday"), ValidationError);
}

TEST_CASE("latitude weights") {
  const double eq[] = {0.0};
  CHECK(latitude_weights(eq)[0] == doctest::Approx(1.0).epsilon(1e-15));
  const double two[] = {0.0, 60.0};
  const auto w = latitude_weights(two);
  CHECK(w[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  const GridSpec g = GridSpec::fine();
  const auto wp = latitude_weights(g);
  REQUIRE(wp.size() == 121);
  CHECK(std::max_element(wp.begin(), wp.end()) - wp.begin() == 60);
  for (std::size_t i = 0; i < 121; ++i) CHECK(wp[i] == doctest::Approx(wp[120 - i]).epsilon(1e-12));
  CHECK(std::accumulate(wp.begin(), wp.end(), 0.0) / 121.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(wp[0] < 1e-15);
}

TEST_CASE("cell weights skip masked cells") {
  const GridSpec g = small_grid();
  Mask m(g.cells(), 1);
  m[0] = 0;
  m[5] = 0;
  const auto w = cell_weights(g, &m);
  CHECK(w[0] == 0.0);
  CHECK(w[5] == 0.0);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));
  std::vector<double> slab(g.cells(), 2.0);
  slab[0] = std::numeric_limits<double>::quiet_NaN();
  slab[5] = 1e300;
  CHECK(weighted_mean(w, slab) == doctest::Approx(2.0));
}

TEST_CASE("grid presets") {
  CHECK(GridSpec::fine().cells() == 121 * 240);
  CHECK(GridSpec::desk().n_lat == 31);
  CHECK(GridSpec::desk().n_lon == 60);
  CHECK(GridSpec::latent().cells() == 1800);
  GridSpec bad = GridSpec::desk();
  bad.lat_start_deg = 95.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("fieldset validation and block split") {
  const GridSpec g = small_grid();
  std::vector<Channel> ch{{"T2M", Sphere::atmosphere, nullptr}, {"SST", Sphere::ocean, nullptr}};
  FieldSet x = constant_field(g, ch, parse_date("2000-01-01"), 1.0);
  CHECK_NOTHROW(x.validate());
  CHECK(block_channels(ch, false) == std::vector<std::size_t>{0});
  CHECK(block_channels(ch, true) == std::vector<std::size_t>{1});
  x.values[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(x.validate(), ValidationError);
  std::vector<Channel> dup{{"T2M", Sphere::atmosphere, nullptr}, {"T2M", Sphere::ocean, nullptr}};
  CHECK_THROWS_AS(constant_field(g, dup, {}, 0.0).validate(), ValidationError);
  CHECK(x.channel_index("SST") == 1);
  CHECK_THROWS_AS((void)x.channel_index("Q500"), ValidationError);
}

TEST_CASE("climatology of constants, ramps and two years") {
  const GridSpec g = small_grid();
  std::vector<Channel> ch{{"T2M", Sphere::atmosphere, nullptr}};
  std::vector<FieldSet> samples;
  for (int d = 0; d < 365; ++d) samples.push_back(constant_field(g, ch, add_days(parse_date("2001-01-01"), d), 4.25));
  const Climatology c = build_climatology(samples, 15);
  for (int s = 0; s < kCalendarSlots; ++s)
    for (double v : c.day(s, 0)) REQUIRE(v == 4.25);

  samples.clear();
  for (int d = 0; d < 365; ++d) {
    const Date date = add_days(parse_date("2001-01-01"), d);
    samples.push_back(constant_field(g, ch, date, calendar_slot(date)));
  }
  const Climatology ramp = build_climatology(samples, 15);
  for (int s = 100; s < 300; ++s) CHECK(ramp.day(s, 0)[0] == doctest::Approx(s).epsilon(1e-12));

  samples.clear();
  for (int y = 0; y < 2; ++y)
    for (int d = 0; d < 365; ++d)
      samples.push_back(constant_field(g, ch, add_days(parse_date(y == 0 ? "2001-01-01" : "2002-01-01"), d), 3.0 + 2.0 * y));
  const Climatology two = build_climatology(samples, 15);
  for (int s = 0; s < kCalendarSlots; ++s) CHECK(two.day(s, 0)[2] == doctest::Approx(4.0));
  CHECK(two.start_year == 2001);
  CHECK(two.end_year == 2002);
}

TEST_CASE("climatology requires covered windows") {
  const GridSpec g = small_grid();
  std::vector<Channel> ch{{"T2M", Sphere::atmosphere, nullptr}};
  std::vector<FieldSet> samples{constant_field(g, ch, parse_date("2001-06-01"), 1.0)};
  CHECK_THROWS_AS(build_climatology(samples, 15), ValidationError);
  CHECK_THROWS_AS(build_climatology(std::vector<FieldSet>{}, 15), ValidationError);
}

TEST_CASE("anomaly identities") {
  const GridSpec g = small_grid();
  std::vector<Channel> ch{{"T2M", Sphere::atmosphere, nullptr}};
  std::vector<FieldSet> samples;
  for (int d = 0; d < 365; ++d) samples.push_back(constant_field(g, ch, add_days(parse_date("2001-01-01"), d), 2.0));
  const Climatology c = build_climatology(samples, 10);
  const FieldSet same = constant_field(g, ch, parse_date("2003-05-05"), 2.0);
  const FieldSet a0 = anomaly(same, c);
  for (double v : a0.values.values()) CHECK(v == 0.0);
  const FieldSet shifted = constant_field(g, ch, parse_date("2003-05-05"), 2.5);
  const FieldSet a1 = anomaly(shifted, c);
  for (double v : a1.values.values()) CHECK(v == doctest::Approx(0.5));

  Climatology zero = c;
  std::fill(zero.mean.values().begin(), zero.mean.values().end(), 0.0);
  FieldSet x = same;
  for (std::size_t k = 0; k < x.values.size(); ++k) x.values[k] = 0.1 * k;
  CHECK(anomaly(x, zero).values.bitwise_equal(x.values));

  std::vector<Channel> other{{"MSLP", Sphere::atmosphere, nullptr}};
  CHECK_THROWS_AS(anomaly(constant_field(g, other, {}, 0.0), c), ValidationError);
}

TEST_CASE("great circle distance") {
  CHECK(great_circle_km({10, 20}, {10, 20}) == 0.0);
  CHECK(great_circle_km({0, 0}, {0, 180}) == doctest::Approx(std::numbers::pi * 6371.0).epsilon(1e-12));
  CHECK(great_circle_km({0, 0}, {0, 180}) == doctest::Approx(20015.086796).epsilon(1e-9));
  CHECK(great_circle_km({90, 0}, {-90, 0}) == doctest::Approx(great_circle_km({0, 0}, {0, 180})).epsilon(1e-12));
  // Spherical law of cosines as an independent formula on well-separated points.
  Rng r(3);
  for (int i = 0; i < 200; ++i) {
    const LatLon p{180 * r.uniform() - 90, 360 * r.uniform()};
    const LatLon q{180 * r.uniform() - 90, 360 * r.uniform()};
    const double d2r = std::numbers::pi / 180.0;
    const double c = std::sin(p.lat * d2r) * std::sin(q.lat * d2r) +
                     std::cos(p.lat * d2r) * std::cos(q.lat * d2r) * std::cos((p.lon - q.lon) * d2r);
    const double ref = 6371.0 * std::acos(std::clamp(c, -1.0, 1.0));
    CHECK(great_circle_km(p, q) == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("region masks") {
  const GridSpec g = GridSpec::fine();
  const Mask all = region_mask(g, RegionBox{});
  CHECK(std::count(all.begin(), all.end(), 1) == static_cast<long>(g.cells()));

  const Mask one = region_mask(g, RegionBox{44.9, 45.1, 10.4, 10.6});
  CHECK(std::count(one.begin(), one.end(), 1) == 1);

  // Columns sit at multiples of 1.5 degrees, so [350, 360) holds 351 ... 358.5
  // and [0, 10] holds 0 ... 9: 6 + 7 columns.
  std::size_t expected = 0;
  for (int k = 0; k < 240; ++k) {
    const double lon = 1.5 * k;
    if (lon >= 350.0 || lon <= 10.0) ++expected;
  }
  REQUIRE(expected == 13);
  const Mask wrap = region_mask(g, RegionBox{-10, 10, 350, 10});
  std::size_t rows = 0;
  for (std::size_t i = 0; i < g.n_lat; ++i) {
    std::size_t cols = 0;
    for (std::size_t j = 0; j < g.n_lon; ++j) cols += wrap[i * g.n_lon + j];
    if (cols == 0) continue;
    ++rows;
    CHECK(cols == expected);
  }
  CHECK(rows == 13);
  CHECK_THROWS_AS(RegionBox({20, 10, 0, 10}).validate(), ValidationError);
}

TEST_CASE("empirical quantile rule") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(empirical_quantile(v, 95) == doctest::Approx(95.05).epsilon(1e-14));
  CHECK(empirical_quantile(v, 0) == 1.0);
  CHECK(empirical_quantile(v, 100) == 100.0);
  CHECK(empirical_quantile(std::vector<double>(17, 3.5), 99) == 3.5);
  CHECK_THROWS_AS(empirical_quantile({}, 50), ValidationError);
  const double xs[] = {1.0, 2.0, 3.0, 4.0};
  CHECK(mean(xs) == 2.5);
  CHECK(sample_stddev(xs) == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("parallel_for runs every index once and rethrows") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw NumericalError("boom");
                  }),
                  NumericalError);
}
