#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "s2sk/error.hpp"
#include "s2sk/rng.hpp"
#include "s2sk/verify.hpp"

using namespace s2sk;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.n_lat = 4;
  g.n_lon = 5;
  g.lat_start_deg = 45;
  g.lat_step_deg = -30;
  g.lon_start_deg = 0;
  g.lon_step_deg = 72;
  return g;
}

std::vector<Channel> two_channels(const GridSpec& g) {
  auto mask = std::make_shared<Mask>(g.cells(), 1);
  (*mask)[0] = 0;
  (*mask)[7] = 0;
  return {{"T2M", Sphere::atmosphere, nullptr}, {"SST", Sphere::ocean, mask}};
}

FieldSet random_field(const GridSpec& g, const std::vector<Channel>& ch, Date d, Rng& r, double scale = 1.0) {
  FieldSet x{g, ch, Tensor({ch.size(), g.n_lat, g.n_lon}), d};
  for (std::size_t c = 0; c < ch.size(); ++c) {
    auto s = x.channel(c);
    for (std::size_t k = 0; k < s.size(); ++k)
      s[k] = (ch[c].valid && !(*ch[c].valid)[k]) ? std::nan("") : scale * r.normal();
  }
  return x;
}

}  // namespace

TEST_CASE("crps anchors") {
  const double same[] = {2.0, 2.0, 2.0};
  CHECK(crps(same, 2.0) == 0.0);
  const double one[] = {1.25};
  CHECK(crps(one, -0.5) == 1.75);
  const double pair[] = {0.0, 1.0};
  CHECK(crps(pair, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(crps(pair, 0.5, true) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(crps(one, 0.0, true), ValidationError);
  CHECK_THROWS_AS(crps(std::span<const double>{}, 0.0), ValidationError);
}

TEST_CASE("sorted crps equals the pairwise definition") {
  Rng r(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + r.index(64);
    std::vector<double> x(m);
    for (double& v : x) v = 3.0 * r.normal();
    if (m > 3) x[1] = x[2];
    const double y = 3.0 * r.normal();
    CHECK(std::abs(crps(x, y) - static_cast<double>(oracle::crps_pairwise(x, y))) < 1e-10);
    if (m >= 2) CHECK(std::abs(crps(x, y, true) - static_cast<double>(oracle::crps_pairwise(x, y, true))) < 1e-10);
  }
}

TEST_CASE("ssr calibration and homogeneity") {
  Rng r(2);
  const std::size_t points = 10000, m = 51;
  std::vector<double> ens(points * m), truth(points), w(points, 1.0);
  for (std::size_t p = 0; p < points; ++p) {
    const double centre = 5.0 * r.normal();
    for (std::size_t k = 0; k < m; ++k) ens[p * m + k] = centre + r.normal();
    truth[p] = centre + r.normal();
  }
  CHECK(std::abs(ssr(ens, m, truth, w) - 1.0) < 0.03);

  std::vector<double> wide = ens;
  for (std::size_t p = 0; p < points; ++p) {
    const double mean = std::accumulate(ens.begin() + p * m, ens.begin() + (p + 1) * m, 0.0) / m;
    for (std::size_t k = 0; k < m; ++k) wide[p * m + k] = mean + 2.0 * (ens[p * m + k] - mean);
  }
  CHECK(ssr(wide, m, truth, w) == doctest::Approx(2.0 * ssr(ens, m, truth, w)).epsilon(1e-9));
  CHECK(ssr(wide, m, truth, w, false) == doctest::Approx(2.0 * ssr(ens, m, truth, w, false)).epsilon(1e-9));
  CHECK(ssr(ens, m, truth, w) == doctest::Approx(std::sqrt(52.0 / 51.0) * ssr(ens, m, truth, w, false)).epsilon(1e-12));

  std::vector<double> flat(4 * 3, 1.0);
  const std::vector<double> t{2, 3, 4, 5}, w4(4, 1.0);
  CHECK(ssr(flat, 3, t, w4) == 0.0);
  CHECK_THROWS_AS(ssr(flat, 1, t, w4), ValidationError);
  CHECK_THROWS_AS(ssr(flat, 3, std::vector<double>{1, 1, 1, 1}, w4), ValidationError);
}

TEST_CASE("wrmse and acc") {
  const std::vector<double> t{1, 2, 3, 4}, w{1, 1, 1, 1};
  CHECK(wrmse(t, t, w) == 0.0);
  const std::vector<double> shifted{1.5, 2.5, 3.5, 4.5};
  CHECK(wrmse(shifted, t, w) == doctest::Approx(0.5));
  const std::vector<double> w2{0.5, 0.5, 2.0, 1.0};
  CHECK(wrmse(shifted, t, w2) == doctest::Approx(0.5));
  const std::vector<double> a{1, -2, 0.5, 3}, na{-1, 2, -0.5, -3};
  CHECK(acc(a, a, w) == doctest::Approx(1.0));
  CHECK(acc(na, a, w2) == doctest::Approx(-1.0));
  // Weighted centred correlation computed directly.
  const std::vector<double> b{0.3, -1.0, 2.0, 0.1};
  double sw = 0, mf = 0, mt = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    sw += w2[i];
    mf += w2[i] * a[i];
    mt += w2[i] * b[i];
  }
  mf /= sw;
  mt /= sw;
  double num = 0, vf = 0, vt = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    num += w2[i] * (a[i] - mf) * (b[i] - mt);
    vf += w2[i] * (a[i] - mf) * (a[i] - mf);
    vt += w2[i] * (b[i] - mt) * (b[i] - mt);
  }
  CHECK(acc(a, b, w2) == doctest::Approx(num / std::sqrt(vf * vt)).epsilon(1e-12));
  const std::vector<double> flat{2, 2, 2, 2};
  CHECK_THROWS_AS(acc(flat, a, w), ValidationError);
}

TEST_CASE("field metrics skip masked cells") {
  const GridSpec g = small_grid();
  const auto ch = two_channels(g);
  Rng r(3);
  const Date d = parse_date("2001-07-01");
  const FieldSet truth = random_field(g, ch, d, r);
  std::vector<FieldSet> members{truth, truth, truth};
  CHECK(field_crps(members, truth, 0) == 0.0);
  CHECK(field_crps(members, truth, 1) == 0.0);
  CHECK(field_wrmse(std::span(&truth, 1), std::span(&truth, 1), 1) == 0.0);

  FieldSet off = truth;
  for (double& v : off.values.values()) v += 0.25;
  CHECK(field_wrmse(std::span(&off, 1), std::span(&truth, 1), 1) == doctest::Approx(0.25));
  CHECK(std::isfinite(field_crps(std::vector<FieldSet>{off}, truth, 1)));

  const FieldSet mean = ensemble_mean(std::vector<FieldSet>{truth, off});
  CHECK(mean.values.at(0, 1, 1) == doctest::Approx(truth.values.at(0, 1, 1) + 0.125));
  CHECK(std::isnan(mean.values.at(1, 0, 0)));

  std::vector<FieldSet> ens;
  for (int k = 0; k < 5; ++k) ens.push_back(random_field(g, ch, d, r));
  const double s = field_ssr(EnsembleSeries{ens}, std::span(&truth, 1), 1);
  CHECK(std::isfinite(s));
  CHECK(s > 0.0);
}

TEST_CASE("field acc of a perfect forecast is one") {
  const GridSpec g = small_grid();
  const auto ch = two_channels(g);
  Rng r(4);
  std::vector<FieldSet> series;
  for (int d = 0; d < 365; ++d) series.push_back(random_field(g, ch, add_days(parse_date("2001-01-01"), d), r));
  const Climatology clim = build_climatology(series, 15);
  const std::span<const FieldSet> part(series.data() + 40, 5);
  CHECK(field_acc(part, part, clim, clim, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(field_acc(part, part, clim, clim, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("percentile thresholds") {
  const GridSpec g = small_grid();
  const auto ch = two_channels(g);
  Rng r(5);
  std::vector<FieldSet> pool;
  for (int d = 0; d < 730; ++d) pool.push_back(random_field(g, ch, add_days(parse_date("2001-01-01"), d), r));
  const ThresholdField q95 = percentile_thresholds(pool, 95, 15, {0, 100, 200});
  const ThresholdField q99 = percentile_thresholds(pool, 99, 15, {0, 100, 200});
  CHECK(q95.low_confidence_slots == 0);
  CHECK(q95.pool_sizes == std::vector<std::size_t>{62, 62, 62});
  for (int slot : {0, 100, 200})
    for (std::size_t c = 0; c < 2; ++c) {
      const auto a = q95.at(slot, c), b = q99.at(slot, c);
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (c == 1 && (k == 0 || k == 7)) {
          CHECK(std::isnan(a[k]));
          continue;
        }
        CHECK(b[k] >= a[k]);
      }
    }
  // Slot 100 pools calendar slots 85..115 from both years.
  std::vector<double> direct;
  for (const auto& s : pool) {
    const int slot = calendar_slot(s.valid_time);
    if (slot >= 85 && slot <= 115) direct.push_back(s.channel(0)[3]);
  }
  std::sort(direct.begin(), direct.end());
  const double h = (direct.size() - 1) * 0.95;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double want = direct[lo] + (h - lo) * (direct[lo + 1] - direct[lo]);
  CHECK(q95.at(100, 0)[3] == doctest::Approx(want).epsilon(1e-14));
  CHECK_THROWS_AS(q95.at(5, 0), ValidationError);

  std::vector<FieldSet> few(pool.begin(), pool.begin() + 10);
  const ThresholdField sparse = percentile_thresholds(few, 95, 15, {5});
  CHECK(sparse.low_confidence_slots == 1);

  std::vector<FieldSet> constant;
  for (int d = 0; d < 40; ++d) {
    FieldSet x = pool[d];
    for (double& v : x.values.values())
      if (!std::isnan(v)) v = 1.5;
    constant.push_back(x);
  }
  const ThresholdField cq = percentile_thresholds(constant, 99, 15, {20});
  CHECK(cq.at(20, 0)[5] == 1.5);
  CHECK_THROWS_AS(percentile_thresholds(pool, 100, 15), ValidationError);
}

TEST_CASE("brier skill anchors") {
  CHECK(base_rate(95) == doctest::Approx(0.05));
  CHECK(base_rate(99) == doctest::Approx(0.01));
  Rng r(6);
  const std::size_t times = 200, points = 30;
  std::vector<double> occ(times * points), w(points, 1.0);
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = r.uniform() < 0.1 ? 1.0 : 0.0;

  const std::vector<double> climo(occ.size(), 0.05);
  const BssResult zero = bss_from_probabilities(climo, occ, points, 0.05, w);
  CHECK(zero.bss == 0.0);
  CHECK(zero.used_points == points);

  const BssResult perfect = bss_from_probabilities(occ, occ, points, 0.05, w);
  CHECK(perfect.bss == 1.0);

  const std::vector<double> half{0.5}, event{1.0}, one{1.0};
  const BssResult single = bss_from_probabilities(half, event, 1, 0.05, one);
  CHECK(single.bss == doctest::Approx(1.0 - 0.25 / (0.95 * 0.95)).epsilon(1e-14));

  // Ensemble form: two members straddle the threshold and the event occurs.
  const std::vector<double> ens{2.0, 0.0}, truth{3.0}, thr{1.0};
  const BssResult e = bss(ens, 2, truth, thr, 1, 0.05, one);
  CHECK(e.bss == doctest::Approx(single.bss).epsilon(1e-14));
  CHECK_THROWS_AS(bss_from_probabilities(half, event, 2, 0.05, one), ValidationError);
}

TEST_CASE("field bss with a perfect deterministic ensemble") {
  const GridSpec g = small_grid();
  const auto ch = two_channels(g);
  Rng r(7);
  std::vector<FieldSet> pool;
  for (int d = 0; d < 365; ++d) pool.push_back(random_field(g, ch, add_days(parse_date("2001-01-01"), d), r));
  const ThresholdField q = percentile_thresholds(pool, 90, 15, {calendar_slot(parse_date("2002-03-10")),
                                                                calendar_slot(parse_date("2002-03-11"))});
  std::vector<FieldSet> truth;
  EnsembleSeries fc;
  for (int d = 0; d < 2; ++d) {
    truth.push_back(random_field(g, ch, add_days(parse_date("2002-03-10"), d), r, 2.0));
    fc.push_back({truth.back(), truth.back()});
  }
  const BssResult b = field_bss(fc, truth, q, 0);
  CHECK(b.bss == 1.0);
  CHECK(b.used_points == g.cells());
  const BssResult s = field_bss(fc, truth, q, 1);
  CHECK(s.used_points == g.cells() - 2);
}

TEST_CASE("scorecard semantics") {
  MetricTable base{{{"T2M", 7}, 1.0}, {{"T2M", 14}, 2.0}, {{"MSLP", 7}, 0.5}, {{"MSLP", 14}, 0.0}};
  MetricTable model{{{"T2M", 7}, 0.88}, {{"T2M", 14}, 2.0}, {{"MSLP", 7}, 0.6}, {{"MSLP", 14}, 0.1}};
  const Scorecard sc = scorecard(model, base);
  REQUIRE(sc.variables == std::vector<std::string>{"MSLP", "T2M"});
  REQUIRE(sc.leads == std::vector<int>{7, 14});
  CHECK(sc.cells[1][0].render() == "+12.0");
  CHECK(sc.cells[1][1].render() == "0.0");
  CHECK(sc.cells[0][0].render() == "-20.0");
  CHECK(sc.cells[0][1].render() == "undefined");

  MetricTable partial = model;
  partial.erase({"T2M", 14});
  CHECK(scorecard(partial, base).cells[1][1].render() == "missing");

  const Scorecard same = scorecard(base, base);
  CHECK(same.cells[1][0].render() == "0.0");

  MetricTable acc_b{{{"Z500", 1}, 0.5}}, acc_m{{{"Z500", 1}, 0.6}};
  CHECK(scorecard(acc_m, acc_b, false).cells[0][0].render() == "+20.0");

  for (double f : {0.5, 0.7, 0.88, 0.9, 0.99}) {
    MetricTable b{{{"X", 1}, 3.7}}, m{{{"X", 1}, f * 3.7}};
    const ScoreCell c = scorecard(m, b).cells[0][0];
    CHECK(c.percent == doctest::Approx(100 * (1 - f)).epsilon(1e-12));
  }
}
