#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <unistd.h>

#include "doctest.h"
#include "s2sk/error.hpp"
#include "s2sk/synth.hpp"
#include "s2sk/tensor_io.hpp"

using namespace s2sk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("s2sk_harness_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

GridSpec small_grid() { return GridSpec{6, 8, 75.0, -30.0, 0.0, 45.0}; }

SphereDynamics noise_only(const SphereDynamics& d) {
  SphereDynamics out = d;
  out.seasonal_amplitude = 0.0;
  out.wave_amplitude = 0.0;
  return out;
}

SynthConfig noise_only_config(std::uint64_t seed) {
  SynthConfig c;
  c.grid = small_grid();
  c.inventory = "compact";
  c.seed = seed;
  c.atmosphere = noise_only(c.atmosphere);
  c.ocean = noise_only(c.ocean);
  c.land = noise_only(c.land);
  c.flux = noise_only(c.flux);
  return c;
}

// Per-cell series of one channel, [cell][day].
std::vector<std::vector<double>> collect(const SynthConfig& c, const std::string& name, int days) {
  SyntheticGenerator gen(c);
  std::vector<std::vector<double>> out(c.grid.cells());
  std::size_t idx = 0;
  for (std::size_t k = 0; k < gen.channels().size(); ++k)
    if (gen.channels()[k].name == name) idx = k;
  for (int d = 0; d < days; ++d) {
    const FieldSet f = gen.next();
    const auto slab = f.channel(idx);
    for (std::size_t k = 0; k < slab.size(); ++k) out[k].push_back(slab[k]);
  }
  return out;
}

// Pooled correlation of x(t) with y(t - lag) across cells valid in both.
double lagged_corr(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                   std::size_t lag, std::size_t max_lag) {
  double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0, n = 0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    if (std::isnan(x[c].front()) || std::isnan(y[c].front())) continue;
    for (std::size_t t = max_lag; t < x[c].size(); ++t) {
      const double a = x[c][t], b = y[c][t - lag];
      sxy += a * b;
      sxx += a * a;
      syy += b * b;
      sx += a;
      sy += b;
      n += 1;
    }
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  return cov / std::sqrt(vx * vy);
}

}  // namespace

TEST_CASE("inventories have the documented channel counts") {
  CHECK(channel_inventory("full").size() == 81);
  CHECK(channel_inventory("compact").size() == 21);
  CHECK_THROWS_AS(channel_inventory("tiny"), ValidationError);
}

TEST_CASE("zero noise and no waves leave a pure 365-day seasonal cycle") {
  SynthConfig c;
  c.grid = small_grid();
  c.inventory = "compact";
  for (SphereDynamics* d : {&c.atmosphere, &c.ocean, &c.land, &c.flux}) {
    d->noise_std = 0.0;
    d->wave_amplitude = 0.0;
  }
  const auto days = generate_synthetic(c, 800);
  const std::size_t t2m = days[0].channel_index("T2M");
  bool varies = false;
  for (std::size_t d = 0; d + 365 < days.size(); ++d) {
    const auto a = days[d].values.values();
    const auto b = days[d + 365].values.values();
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (std::isnan(a[k])) {
        REQUIRE(std::isnan(b[k]));
        continue;
      }
      REQUIRE(a[k] == b[k]);
    }
    if (days[d].channel(t2m)[0] != days[0].channel(t2m)[0]) varies = true;
  }
  CHECK(varies);
}

TEST_CASE("AR(1) noise has the configured lag-one autocorrelation") {
  const auto c = noise_only_config(11);
  const auto q = collect(c, "Q500", 10000);
  const double r = lagged_corr(q, q, 1, 1);
  CHECK(std::abs(r - c.atmosphere.ar1) < 0.02);
  const auto st = collect(c, "ST1", 10000);
  CHECK(std::abs(lagged_corr(st, st, 1, 1) - c.land.ar1) < 0.02);
}

TEST_CASE("cross-correlation peaks at the configured coupling lag") {
  const auto c = noise_only_config(5);
  REQUIRE(c.couplings.size() == 2);
  for (const auto& link : c.couplings) {
    const auto target = collect(c, link.target, 10000);
    const auto driver = collect(c, link.driver, 10000);
    const std::size_t max_lag = 20;
    std::size_t best = 0;
    double best_r = -1.0;
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
      const double r = lagged_corr(target, driver, lag, max_lag);
      if (r > best_r) {
        best_r = r;
        best = lag;
      }
    }
    INFO(link.driver << " -> " << link.target);
    CHECK(best == static_cast<std::size_t>(link.lag_days));
    CHECK(best_r > 0.1);
  }
}

TEST_CASE("generator is deterministic and seed dependent") {
  SynthConfig c;
  c.grid = small_grid();
  c.seed = 9;
  const auto a = generate_synthetic(c, 20);
  const auto b = generate_synthetic(c, 20);
  for (std::size_t d = 0; d < a.size(); ++d) {
    const auto x = a[d].values.values(), y = b[d].values.values();
    for (std::size_t k = 0; k < x.size(); ++k)
      REQUIRE((x[k] == y[k] || (std::isnan(x[k]) && std::isnan(y[k]))));
  }
  c.seed = 10;
  const auto other = generate_synthetic(c, 1);
  CHECK(other[0].channel(0)[0] != a[0].channel(0)[0]);
}

TEST_CASE("a channel's values do not depend on the inventory") {
  SynthConfig c;
  c.grid = small_grid();
  c.seed = 21;
  c.inventory = "full";
  const auto full = generate_synthetic(c, 15);
  c.inventory = "compact";
  const auto compact = generate_synthetic(c, 15);
  for (const char* name : {"T2M", "MSLP", "Q500", "SM1"}) {
    for (std::size_t d = 0; d < full.size(); ++d) {
      const auto x = full[d].channel(full[d].channel_index(name));
      const auto y = compact[d].channel(compact[d].channel_index(name));
      for (std::size_t k = 0; k < x.size(); ++k) REQUIRE(x[k] == y[k]);
    }
  }
}

TEST_CASE("ocean-only channels are NaN exactly over land") {
  SynthConfig c;
  c.inventory = "compact";
  const auto day = generate_synthetic(c, 1)[0];
  const Mask land = land_mask(c.grid);
  std::size_t land_cells = 0;
  for (const char* name : {"SST", "SIC"}) {
    const auto slab = day.channel(day.channel_index(name));
    for (std::size_t k = 0; k < slab.size(); ++k) {
      REQUIRE(std::isnan(slab[k]) == static_cast<bool>(land[k]));
      land_cells += land[k];
    }
  }
  CHECK(land_cells > 0);
  const auto t2m = day.channel(day.channel_index("T2M"));
  CHECK(std::none_of(t2m.begin(), t2m.end(), [](double v) { return std::isnan(v); }));
}

TEST_CASE("synthetic config validation and JSON round trip") {
  SynthConfig c;
  c.seed = 77;
  c.inventory = "compact";
  c.ocean.ar1 = 0.9;
  c.couplings = {{"ST1", "T850", 3, 0.25}};
  const SynthConfig back = SynthConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.seed == 77);
  CHECK(back.couplings.at(0).lag_days == 3);

  SynthConfig bad = c;
  bad.atmosphere.ar1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.couplings = {{"T2M", "MSLP", 1, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.couplings = {{"SST", "SM1", 1, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.couplings = {{"NOPE", "T2M", 1, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("tensor files round trip in f64 and f32") {
  TempDir dir("tensor");
  Tensor t({2, 3, 4});
  Rng r(3);
  r.fill_normal(t.values());
  t.values()[5] = std::numeric_limits<double>::quiet_NaN();

  write_tensor(dir.file("a.s2sk"), t, DType::f64, nlohmann::json{{"note", "x"}});
  const auto a = read_tensor(dir.file("a.s2sk"));
  CHECK(a.dtype == DType::f64);
  CHECK(a.data.shape() == t.shape());
  CHECK(a.sidecar.at("note") == "x");
  for (std::size_t k = 0; k < t.size(); ++k)
    CHECK((a.data.values()[k] == t.values()[k] || (k == 5 && std::isnan(a.data.values()[k]))));

  write_tensor(dir.file("b.s2sk"), t, DType::f32);
  const auto b = read_tensor(dir.file("b.s2sk"));
  CHECK(b.dtype == DType::f32);
  CHECK(b.sidecar.is_null());
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (k == 5) {
      CHECK(std::isnan(b.data.values()[k]));
      continue;
    }
    CHECK(b.data.values()[k] == static_cast<double>(static_cast<float>(t.values()[k])));
  }
  CHECK(fs::file_size(dir.file("b.s2sk")) == header_bytes(3) + 24 * 4);
}

TEST_CASE("fine-grid f32 payload is channels x 121 x 240 x 4 bytes") {
  TempDir dir("payload");
  const GridSpec g = GridSpec::fine();
  const std::size_t channels = channel_inventory("full").size();
  Tensor t({channels, g.n_lat, g.n_lon}, 0.5);
  write_tensor(dir.file("state.s2sk"), t, DType::f32);
  const std::size_t payload = fs::file_size(dir.file("state.s2sk")) - header_bytes(3);
  CHECK(payload == std::size_t{81} * 121 * 240 * 4);
  CHECK(payload == 9408960);
  CHECK(read_tensor(dir.file("state.s2sk")).data.values()[1234] == 0.5);
}

TEST_CASE("corrupt tensor files raise io errors") {
  TempDir dir("corrupt");
  Tensor t({4, 5}, 1.0);
  const auto path = dir.file("t.s2sk");

  write_tensor(path, t, DType::f64);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_tensor(path), IoError);

  write_tensor(path, t, DType::f64);
  fs::resize_file(path, fs::file_size(path) - 8);
  try {
    read_tensor(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    const std::size_t full = header_bytes(2) + 20 * 8;
    CHECK(msg.find("expected " + std::to_string(full)) != std::string::npos);
    CHECK(msg.find("found " + std::to_string(full - 8)) != std::string::npos);
  }

  write_tensor(path, t, DType::f64);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6);
    const char code = 9;
    f.write(&code, 1);
  }
  CHECK_THROWS_AS(read_tensor(path), IoError);

  write_tensor(path, t, DType::f64);
  fs::resize_file(path, 10);
  CHECK_THROWS_AS(read_tensor(path), IoError);

  CHECK_THROWS_AS(read_tensor(dir.file("missing.s2sk")), IoError);
  CHECK_THROWS_AS(parse_dtype("f16"), ValidationError);
}

TEST_CASE("streaming writer and reader agree with whole-file IO") {
  TempDir dir("stream");
  const auto path = dir.file("s.s2sk");
  TensorWriter w(path, DType::f64, {3, 2, 2});
  for (int s = 0; s < 3; ++s) {
    std::vector<double> slab(4);
    std::iota(slab.begin(), slab.end(), 10.0 * s);
    w.append(slab);
  }
  w.finish(nlohmann::json{{"k", 1}});

  TensorReader r(path);
  CHECK(r.shape() == Shape{3, 2, 2});
  CHECK(r.slab_count() == 3);
  CHECK(r.sidecar().at("k") == 1);
  CHECK(r.read_slab(2) == std::vector<double>{20, 21, 22, 23});
  CHECK(r.read_slab(0) == std::vector<double>{0, 1, 2, 3});
  CHECK_THROWS_AS(r.read_slab(3), ValidationError);
  CHECK(read_tensor(path).data.values()[9] == 21.0);

  TensorWriter partial(dir.file("p.s2sk"), DType::f32, {2, 3});
  partial.append(std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(partial.append(std::vector<double>{1, 2}), ValidationError);
  CHECK_THROWS_AS(partial.finish(), ValidationError);
}

TEST_CASE("series and climatology round trip with masks and dates") {
  TempDir dir("series");
  SynthConfig c;
  c.grid = small_grid();
  c.inventory = "compact";
  c.seed = 4;
  const auto days = generate_synthetic(c, 5);
  write_series(dir.file("x.s2sk"), days, DType::f64, nlohmann::json{{"tag", "t"}});

  const auto back = read_series(dir.file("x.s2sk"));
  REQUIRE(back.size() == days.size());
  CHECK(back[0].grid == c.grid);
  CHECK(back[3].valid_time == days[3].valid_time);
  const std::size_t sst = back[0].channel_index("SST");
  REQUIRE(back[0].channels[sst].masked());
  CHECK(*back[0].channels[sst].valid == *days[0].channels[sst].valid);
  CHECK_FALSE(back[0].channels[back[0].channel_index("T2M")].masked());
  for (std::size_t d = 0; d < days.size(); ++d) {
    const auto x = days[d].values.values(), y = back[d].values.values();
    for (std::size_t k = 0; k < x.size(); ++k)
      REQUIRE((x[k] == y[k] || (std::isnan(x[k]) && std::isnan(y[k]))));
  }

  SeriesReader reader(dir.file("x.s2sk"));
  CHECK(reader.size() == 5);
  CHECK(reader.sidecar().at("tag") == "t");
  CHECK(reader.read(4).channel(0)[3] == days[4].channel(0)[3]);

  SeriesWriter sw(dir.file("y.s2sk"), 5, DType::f64);
  for (const auto& d : days) sw.append(d);
  sw.finish();
  CHECK(read_series(dir.file("y.s2sk"))[2].channel(1)[7] == days[2].channel(1)[7]);

  const auto year = generate_synthetic(c, 366);
  const Climatology clim = build_climatology(year, 3);
  write_climatology(dir.file("clim.s2sk"), clim, DType::f64);
  const Climatology cb = read_climatology(dir.file("clim.s2sk"));
  CHECK(cb.grid == clim.grid);
  CHECK(cb.window_halfwidth_days == 3);
  CHECK(cb.start_year == clim.start_year);
  CHECK(cb.channels.size() == clim.channels.size());
  CHECK(cb.day(100, 2)[5] == clim.day(100, 2)[5]);
  CHECK(cb.day(59, 0)[0] == clim.day(59, 0)[0]);

  fs::remove(sidecar_path(dir.file("x.s2sk")));
  CHECK_THROWS_AS(read_series(dir.file("x.s2sk")), IoError);
}
