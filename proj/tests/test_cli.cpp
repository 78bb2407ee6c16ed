#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "s2sk/conventions.hpp"
#include "s2sk/tensor_io.hpp"

using namespace s2sk;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("s2sk_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

struct Cleanup {
  fs::path dir = root();
  ~Cleanup() { fs::remove_all(dir); }
} cleanup;

std::string at(const std::string& rel) { return (root() / rel).string(); }

struct Result {
  int code = 0;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream err, out;
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  Result r;
  r.code = cli::run(args);
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

// Rows of a CSV file keyed by the header.
std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::istringstream r(line);
    std::string cell;
    std::map<std::string, std::string> row;
    for (const auto& name : header) {
      std::getline(r, cell, ',');
      row[name] = cell;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// 400 days of compact desk data plus its climatology, built once.
const std::string& shared_series() {
  static const std::string path = [] {
    REQUIRE(run({"synth", "--days", "400", "--inventory", "compact", "--seed", "3", "--out", at("shared")}).code == 0);
    REQUIRE(run({"climatology", "--input", at("shared/series.s2sk"), "--out", at("shared")}).code == 0);
    return at("shared/series.s2sk");
  }();
  return path;
}

}  // namespace

TEST_CASE("synth twice with the same seed writes identical files") {
  REQUIRE(run({"synth", "--days", "90", "--seed", "7", "--out", at("s1")}).code == 0);
  REQUIRE(run({"synth", "--days", "90", "--seed", "7", "--out", at("s2")}).code == 0);
  for (const char* f : {"series.s2sk", "series.s2sk.json", "manifest.json"})
    CHECK(slurp(at(std::string("s1/") + f)) == slurp(at(std::string("s2/") + f)));
  REQUIRE(run({"synth", "--days", "90", "--seed", "8", "--out", at("s3")}).code == 0);
  CHECK(slurp(at("s1/series.s2sk")) != slurp(at("s3/series.s2sk")));
  CHECK(read_series(at("s1/series.s2sk")).size() == 90);
}

TEST_CASE("manifest records command, effective config and conventions") {
  REQUIRE(run({"synth", "--days", "4", "--seed", "5", "--inventory", "compact", "--out", at("m")}).code == 0);
  const auto m = read_json(at("m/manifest.json"));
  CHECK(m.at("command") == "synth");
  CHECK(m.at("config").at("days") == 4);
  CHECK(m.at("config").at("seed") == 5);
  CHECK(m.at("config").at("inventory") == "compact");
  CHECK(m.at("conventions") == conventions());
  CHECK(m.at("outputs") == nlohmann::json::array({"series.s2sk"}));
}

TEST_CASE("config file values apply and command-line flags override them") {
  {
    std::ofstream cfg(at("cfg.json"));
    cfg << R"({"synth": {"days": 12, "inventory": "compact"}, "seed": 99})";
  }
  REQUIRE(run({"synth", "--config", at("cfg.json"), "--out", at("c1")}).code == 0);
  CHECK(read_series(at("c1/series.s2sk")).size() == 12);
  CHECK(read_json(at("c1/manifest.json")).at("config").at("inventory") == "compact");

  REQUIRE(run({"synth", "--config", at("cfg.json"), "--days", "5", "--out", at("c2")}).code == 0);
  CHECK(read_series(at("c2/series.s2sk")).size() == 5);

  {
    std::ofstream cfg(at("flat.json"));
    cfg << R"({"days": 3})";
  }
  REQUIRE(run({"synth", "--config", at("flat.json"), "--out", at("c3")}).code == 0);
  CHECK(read_series(at("c3/series.s2sk")).size() == 3);
}

TEST_CASE("exit codes distinguish usage errors, failures and help") {
  const auto unknown = run({"synth", "--bogus", "1"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.rfind("usage error:", 0) == 0);

  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"rollout", "--help"}).code == 0);

  const auto invalid = run({"synth", "--days", "0", "--out", at("bad")});
  CHECK(invalid.code == 1);
  CHECK(invalid.err.rfind("error: category=validation message=", 0) == 0);
  CHECK(std::count(invalid.err.begin(), invalid.err.end(), '\n') == 1);

  const auto missing = run({"climatology", "--input", at("nope.s2sk"), "--out", at("bad")});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: category=io message=", 0) == 0);

  CHECK(run({"rollout", "--out", at("bad")}).code == 1);
  CHECK(run({"synth", "--grid", "moon", "--out", at("bad")}).code == 1);
}

TEST_CASE("evaluate with forecast equal to truth gives zero errors and unit ACC") {
  const auto& series = shared_series();
  REQUIRE(run({"evaluate", "--forecast", series, "--truth", series, "--climatology", at("shared/climatology.s2sk"),
               "--channels", "T2M,Z500,SST", "--out", at("e")})
              .code == 0);
  const auto rows = read_csv(at("e/report.csv"));
  REQUIRE(!rows.empty());
  std::map<std::string, int> seen;
  for (const auto& r : rows) {
    const double v = std::stod(r.at("value"));
    ++seen[r.at("metric")];
    if (r.at("metric") == "acc")
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    else
      CHECK(v == 0.0);
  }
  CHECK(seen["crps"] > 0);
  CHECK(seen["crps"] == seen["rmse"]);
  CHECK(seen["acc"] == seen["crps"]);
  CHECK(seen.count("ssr") == 0);
  CHECK(read_json(at("e/manifest.json")).at("command") == "evaluate");
}

TEST_CASE("rollout, evaluate, extremes and wmid chain end to end") {
  const auto& series = shared_series();
  REQUIRE(run({"rollout", "--input", series, "--init-index", "370", "--horizon", "4", "--members", "3", "--n-infer",
               "2", "--archive-plans", "--seed", "4", "--out", at("r")})
              .code == 0);
  const auto m = read_json(at("r/manifest.json"));
  CHECK(m.at("horizon_days") == 4);
  CHECK(m.at("member_seeds").size() == 3);
  CHECK(m.at("failures").empty());
  CHECK(m.at("outputs").size() == 3 + 8);
  const auto member = read_series(at("r/members/member_001.s2sk"));
  CHECK(member.size() == 4);
  CHECK(read_json(at("r/members/member_001.s2sk.json")).at("member_id") == 1);

  REQUIRE(run({"rollout", "--input", series, "--init-index", "370", "--horizon", "4", "--members", "3", "--n-infer",
               "2", "--archive-plans", "--seed", "4", "--out", at("r2")})
              .code == 0);
  CHECK(slurp(at("r/members/member_002.s2sk")) == slurp(at("r2/members/member_002.s2sk")));

  REQUIRE(run({"evaluate", "--forecast", at("r/members"), "--truth", series, "--channels", "T2M", "--out", at("re")})
              .code == 0);
  const auto rows = read_csv(at("re/report.csv"));
  std::map<std::string, int> count;
  for (const auto& r : rows) {
    ++count[r.at("metric")];
    CHECK(std::stoi(r.at("lead_day")) >= 1);
    CHECK(std::stoi(r.at("lead_day")) <= 4);
  }
  CHECK(count["crps"] == 4);
  CHECK(count["ssr"] == 4);

  REQUIRE(run({"extremes", "--forecast", at("r/members"), "--truth", series, "--pool", series, "--channels", "T2M",
               "--out", at("x")})
              .code == 0);
  const auto ext = read_csv(at("x/extremes.csv"));
  CHECK(ext.size() == 4 * 2);
  for (const auto& r : ext) CHECK(std::stod(r.at("bss")) <= 1.0);

  std::vector<std::string> plan_args{"wmid"};
  for (const auto& e : fs::directory_iterator(at("r/plans")))
    if (e.path().extension() == ".s2sk") {
      plan_args.push_back("--plan");
      plan_args.push_back(e.path().string());
    }
  REQUIRE(plan_args.size() == 1 + 2 * 8);
  for (const char* a : {"--region", "-30,30,0,90", "--out"}) plan_args.push_back(a);
  plan_args.push_back(at("w"));
  REQUIRE(run(plan_args).code == 0);
  const auto w = read_csv(at("w/wmid.csv"));
  CHECK(w.size() == 8);
  for (const auto& r : w) {
    const double km = std::stod(r.at("wmid_km"));
    CHECK(km >= 0.0);
    CHECK(km <= 3.1416 * 6371.0);
  }
}

TEST_CASE("fine-grid rollout manifest records 51 member seeds and horizon 45") {
  REQUIRE(run({"synth", "--days", "3", "--grid", "fine", "--seed", "7", "--out", at("fine")}).code == 0);
  REQUIRE(run({"rollout", "--input", at("fine/series.s2sk"), "--horizon", "45", "--members", "51", "--n-infer", "1",
               "--no-write-members", "--seed", "7", "--out", at("fine_r")})
              .code == 0);
  const auto m = read_json(at("fine_r/manifest.json"));
  CHECK(m.at("horizon_days") == 45);
  CHECK(m.at("n_members") == 51);
  REQUIRE(m.at("member_seeds").size() == 51);
  std::set<std::uint64_t> unique;
  for (const auto& s : m.at("member_seeds")) unique.insert(s.get<std::uint64_t>());
  CHECK(unique.size() == 51);
  CHECK(m.at("grid") == grid_to_json(GridSpec::fine()));
  CHECK(m.at("channels").size() == 81);
  CHECK(m.at("failures").empty());
  CHECK(m.at("conventions") == conventions());
}

TEST_CASE("sinkhorn writes a plan with the requested marginals") {
  REQUIRE(run({"sinkhorn", "--rows", "4", "--cols", "6", "--epsilon", "0.1", "--tol", "1e-10", "--seed", "2", "--out",
               at("sk")})
              .code == 0);
  const auto info = read_json(at("sk/sinkhorn.json"));
  CHECK(info.at("converged") == true);
  const auto plan = read_tensor(at("sk/plan.s2sk")).data;
  REQUIRE(plan.shape() == Shape{4, 6});
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 6; ++j) row += plan.values()[i * 6 + j];
    CHECK(row == doctest::Approx(0.25).epsilon(1e-9));
  }
  for (std::size_t j = 0; j < 6; ++j) {
    double col = 0;
    for (std::size_t i = 0; i < 4; ++i) col += plan.values()[i * 6 + j];
    CHECK(col == doctest::Approx(1.0 / 6.0).epsilon(1e-9));
  }

  Tensor cost({2, 2});
  cost.values()[1] = std::numeric_limits<double>::infinity();
  write_tensor(at("inf_cost.s2sk"), cost);
  const auto bad = run({"sinkhorn", "--cost", at("inf_cost.s2sk"), "--out", at("sk_bad")});
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error: category=validation", 0) == 0);
}

TEST_CASE("report renders relative improvement with missing cells") {
  {
    std::ofstream model(at("model.csv"));
    model << "variable,lead_day,metric,value\nT2M,1,crps,0.88\nT2M,2,crps,1.0\nMSLP,1,crps,2.0\n";
    std::ofstream base(at("base.csv"));
    base << "variable,lead_day,metric,value\nT2M,1,crps,1.0\nT2M,2,crps,1.0\nMSLP,1,crps,2.5\nMSLP,2,crps,3.0\n";
  }
  REQUIRE(run({"report", "--model", at("model.csv"), "--baseline", at("base.csv"), "--out", at("rep")}).code == 0);
  const auto rows = read_csv(at("rep/scorecard.csv"));
  REQUIRE(rows.size() == 2);
  std::map<std::string, std::map<std::string, std::string>> by_var;
  for (const auto& r : rows) by_var[r.at("variable")] = r;
  CHECK(by_var.at("T2M").at("day_1") == "+12.0");
  CHECK(by_var.at("T2M").at("day_2") == "0.0");
  CHECK(by_var.at("MSLP").at("day_1") == "+20.0");
  CHECK(by_var.at("MSLP").at("day_2") == "missing");
}

TEST_CASE("pim with the synthetic runner ranks land above zero-influence groups") {
  const auto& series = shared_series();
  REQUIRE(run({"pim", "--input", series, "--init-index", "370", "--horizon", "5", "--members", "3", "--targets", "T2M",
               "--seed", "1", "--out", at("pim")})
              .code == 0);
  const auto rows = read_csv(at("pim/pim.csv"));
  std::map<std::string, double> inc;
  for (const auto& r : rows) inc[r.at("group")] = std::stod(r.at("mean_rmse_increase"));
  CHECK(inc.at("Land") > 0.0);
  CHECK(inc.at("Q") == 0.0);
  CHECK(inc.at("Flux") == 0.0);
  CHECK(read_json(at("pim/manifest.json")).at("command") == "pim");
}
