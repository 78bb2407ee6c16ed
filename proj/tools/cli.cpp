#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>

#include "CLI11.hpp"
#include "cli_io.hpp"
#include "s2sk/attribution.hpp"
#include "s2sk/conventions.hpp"
#include "s2sk/coupling.hpp"
#include "s2sk/error.hpp"
#include "s2sk/pipeline.hpp"
#include "s2sk/synth.hpp"
#include "s2sk/tensor_io.hpp"
#include "s2sk/verify.hpp"

namespace s2sk::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = "out";
};

// Resolves each setting as: command-line flag, else config file key, else
// the built-in default. Records the result as the effective configuration.
class Settings {
 public:
  Settings(CLI::App* sub, const Common& common) : sub_(sub) {
    if (!common.config.empty()) {
      const auto j = read_json_file(common.config);
      if (!j.is_object()) throw ValidationError(common.config + ": config must be a JSON object");
      const std::string name = sub->get_name();
      raw_ = j.contains(name) && j.at(name).is_object() ? j.at(name) : j;
    } else {
      raw_ = nlohmann::json::object();
    }
  }

  template <class T>
  void take(const std::string& flag, const std::string& key, T& var) {
    const auto* opt = sub_->get_option_no_throw(flag);
    const bool on_command_line = opt && opt->count() > 0;
    if (!on_command_line && raw_.contains(key)) {
      try {
        var = raw_.at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config key '" + key + "': " + e.what());
      }
    }
    effective[key] = var;
  }

  nlohmann::json section(const std::string& key) const {
    return raw_.contains(key) ? raw_.at(key) : nlohmann::json::object();
  }

  nlohmann::json effective = nlohmann::json::object();

 private:
  CLI::App* sub_;
  nlohmann::json raw_;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--config", c.config, "JSON configuration file");
  sub->add_option("--out", c.out, "Output directory");
}

fs::path prepare_out(const Common& c) {
  const fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

void write_manifest(const fs::path& out, const std::string& command, nlohmann::json config,
                    std::vector<std::string> outputs, nlohmann::json extra = nlohmann::json::object()) {
  std::sort(outputs.begin(), outputs.end());
  nlohmann::json m = extra;
  m["command"] = command;
  m["config"] = std::move(config);
  m["conventions"] = conventions();
  m["outputs"] = outputs;
  write_json_file(out / "manifest.json", m);
}

GridSpec named_grid(const std::string& name) {
  if (name == "desk") return GridSpec::desk();
  if (name == "fine") return GridSpec::fine();
  if (name == "latent") return GridSpec::latent();
  throw ValidationError("unknown grid '" + name + "' (expected desk, fine or latent)");
}

std::vector<std::size_t> resolve_channels(const std::vector<Channel>& channels, const std::string& list) {
  std::vector<std::size_t> idx;
  if (list.empty()) {
    for (std::size_t c = 0; c < channels.size(); ++c) idx.push_back(c);
    return idx;
  }
  for (const auto& name : split_list(list)) {
    const auto it = std::find_if(channels.begin(), channels.end(), [&](const Channel& c) { return c.name == name; });
    if (it == channels.end()) throw ValidationError("unknown channel '" + name + "'");
    idx.push_back(static_cast<std::size_t>(it - channels.begin()));
  }
  return idx;
}

void require_same_channels(const std::vector<Channel>& a, const std::vector<Channel>& b, const std::string& what) {
  if (a.size() != b.size()) throw ValidationError(what + ": channel counts differ");
  for (std::size_t c = 0; c < a.size(); ++c)
    if (!a[c].same_identity(b[c])) throw ValidationError(what + ": channel " + std::to_string(c) + " differs");
}

// Forecast members: every member_*.s2sk in a directory, or a single file.
std::vector<std::unique_ptr<SeriesReader>> open_forecast(const std::string& path) {
  std::vector<std::unique_ptr<SeriesReader>> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto name = e.path().filename().string();
      if (name.rfind("member_", 0) == 0 && e.path().extension() == ".s2sk") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(std::make_unique<SeriesReader>(f.string()));
  } else {
    out.push_back(std::make_unique<SeriesReader>(path));
  }
  if (out.empty()) throw ValidationError("no forecast members found in " + path);
  for (const auto& r : out) {
    if (r->size() != out.front()->size() || r->dates() != out.front()->dates())
      throw ValidationError("forecast members disagree on their valid dates");
    require_same_channels(r->channels(), out.front()->channels(), "forecast members");
  }
  return out;
}

int lead_day(const SeriesReader& member, std::size_t t) {
  const auto& meta = member.sidecar();
  if (meta.contains("init_date")) {
    const Date init = parse_date(meta.at("init_date").get<std::string>());
    return static_cast<int>((std::chrono::sys_days{member.dates()[t]} - std::chrono::sys_days{init}).count());
  }
  return static_cast<int>(t) + 1;
}

std::map<Date, std::size_t> date_index(const SeriesReader& r) {
  std::map<Date, std::size_t> m;
  for (std::size_t t = 0; t < r.size(); ++t) m[r.dates()[t]] = t;
  return m;
}

std::size_t lookup(const std::map<Date, std::size_t>& idx, Date d, const std::string& what) {
  const auto it = idx.find(d);
  if (it == idx.end()) throw ValidationError(what + " has no data for " + format_date(d));
  return it->second;
}

FieldSet climatology_state(const Climatology& clim, Date date) {
  FieldSet x{clim.grid, clim.channels, Tensor({clim.channels.size(), clim.grid.n_lat, clim.grid.n_lon}), date};
  const int slot = calendar_slot(date);
  for (std::size_t c = 0; c < clim.channels.size(); ++c) {
    const auto src = clim.day(slot, c);
    std::copy(src.begin(), src.end(), x.channel(c).begin());
  }
  return x;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int days = 365;
  std::string grid = "desk";
  std::string inventory = "full";
  std::string start = "2000-01-01";
  std::string dtype = "f32";
};

int cmd_synth(CLI::App* sub, const Common& common, SynthArgs a) {
  Settings s(sub, common);
  std::uint64_t seed = common.seed;
  s.take("--seed", "seed", seed);
  s.take("--days", "days", a.days);
  s.take("--grid", "grid", a.grid);
  s.take("--inventory", "inventory", a.inventory);
  s.take("--start", "start", a.start);
  s.take("--dtype", "dtype", a.dtype);
  SynthConfig cfg = SynthConfig::from_json(s.section("synth"));
  cfg.grid = named_grid(a.grid);
  cfg.inventory = a.inventory;
  cfg.start = parse_date(a.start);
  cfg.seed = seed;
  cfg.validate();
  if (a.days < 1) throw ValidationError("--days must be >= 1");
  const DType dtype = parse_dtype(a.dtype);
  s.effective["synth"] = cfg.to_json();

  const fs::path out = prepare_out(common);
  SyntheticGenerator gen(cfg);
  SeriesWriter writer((out / "series.s2sk").string(), static_cast<std::size_t>(a.days), dtype);
  for (int d = 0; d < a.days; ++d) writer.append(gen.next());
  writer.finish({{"kind", "series"}, {"synth_config", cfg.to_json()}});
  write_manifest(out, "synth", s.effective, {"series.s2sk"});
  return 0;
}

// ---------------------------------------------------------- climatology

struct ClimArgs {
  std::string input;
  int halfwidth = 15;
  std::string dtype = "f32";
};

int cmd_climatology(CLI::App* sub, const Common& common, ClimArgs a) {
  Settings s(sub, common);
  s.take("--input", "input", a.input);
  s.take("--halfwidth", "halfwidth", a.halfwidth);
  s.take("--dtype", "dtype", a.dtype);
  if (a.input.empty()) throw ValidationError("--input is required");
  const DType dtype = parse_dtype(a.dtype);
  SeriesReader r(a.input);
  ClimatologyBuilder b;
  for (std::size_t t = 0; t < r.size(); ++t) b.add(r.read(t));
  const Climatology clim = b.finish(a.halfwidth);
  const fs::path out = prepare_out(common);
  write_climatology((out / "climatology.s2sk").string(), clim, dtype);
  write_manifest(out, "climatology", s.effective, {"climatology.s2sk"},
                 {{"samples", b.sample_count()}, {"start_year", clim.start_year}, {"end_year", clim.end_year}});
  return 0;
}

// -------------------------------------------------------------- rollout

struct RolloutArgs {
  std::string input;
  int init_index = 1;
  int horizon = 45;
  int members = 51;
  int n_infer = 15;
  int steps = 1000;
  std::string schedule = "linear";
  std::string coupling = "optimal_transport";
  std::string climatology;
  bool archive_plans = false;
  bool no_write_members = false;
  bool ablation = false;
  int ablation_members = 11;
};

PipelineConfig pipeline_config(Settings& s, std::uint64_t seed, int steps, const std::string& schedule,
                               const std::string& coupling) {
  PipelineConfig pc = PipelineConfig::from_json(s.section("pipeline"));
  pc.diffusion_steps = steps;
  pc.schedule = parse_schedule_kind(schedule);
  pc.denoiser.coupling = parse_coupling_kind(coupling);
  pc.seed = seed;
  return pc;
}

class FileSink final : public MemberSink {
 public:
  FileSink(fs::path dir, Date init, bool write_members, const ReferenceDenoiser* plans_from, Tensor z_prev,
           Tensor z_cur, fs::path plan_dir)
      : dir_(std::move(dir)),
        init_(init),
        write_(write_members),
        plans_from_(plans_from),
        z_prev_(std::move(z_prev)),
        z_cur_(std::move(z_cur)),
        plan_dir_(std::move(plan_dir)) {}

  void accept(const MemberTrajectory& latent, std::vector<FieldSet>&& decoded) override {
    char name[64];
    std::snprintf(name, sizeof name, "member_%03d.s2sk", latent.member_id);
    if (write_) {
      write_series((dir_ / name).string(), decoded, DType::f32,
                   {{"kind", "forecast_member"},
                    {"member_id", latent.member_id},
                    {"seed", latent.seed},
                    {"init_date", format_date(init_)}});
      outputs.push_back((fs::path("members") / name).string());
    }
    if (plans_from_ && latent.member_id == 0) archive(latent);
  }

  bool wants_decoded() const override { return write_; }

  std::vector<std::string> outputs;

 private:
  void archive(const MemberTrajectory& t) {
    const GridSpec tokens = plans_from_->token_grid();
    for (std::size_t k = 0; k < t.latents.size(); ++k) {
      const Tensor& cur = k == 0 ? z_cur_ : t.latents[k - 1];
      const Tensor& prev = k == 0 ? z_prev_ : (k == 1 ? z_cur_ : t.latents[k - 2]);
      const auto plan = plans_from_->plan(Conditioning{cur, prev});
      for (const TransportPlan* p : {&plan.otb.b_to_a, &plan.otb.a_to_b}) {
        char name[96];
        std::snprintf(name, sizeof name, "plan_%s_lead_%03zu_%s.s2sk", format_date(init_).c_str(), k + 1,
                      std::string(to_string(p->direction)).c_str());
        Tensor data({static_cast<std::size_t>(p->plan.rows()), static_cast<std::size_t>(p->plan.cols())},
                    std::vector<double>(p->plan.data(), p->plan.data() + p->plan.size()));
        write_tensor((plan_dir_ / name).string(), data, DType::f64,
                     {{"kind", "transport_plan"},
                      {"init_date", format_date(init_)},
                      {"lead_day", k + 1},
                      {"direction", to_string(p->direction)},
                      {"grid", grid_to_json(tokens)},
                      {"epsilon", p->epsilon},
                      {"iterations", p->iterations},
                      {"converged", p->converged},
                      {"marginal_error", p->marginal_error}});
        outputs.push_back((fs::path("plans") / name).string());
      }
    }
  }

  fs::path dir_;
  Date init_;
  bool write_;
  const ReferenceDenoiser* plans_from_;
  Tensor z_prev_;
  Tensor z_cur_;
  fs::path plan_dir_;
};

int cmd_rollout(CLI::App* sub, const Common& common, RolloutArgs a) {
  Settings s(sub, common);
  std::uint64_t seed = common.seed;
  s.take("--seed", "seed", seed);
  s.take("--input", "input", a.input);
  s.take("--init-index", "init_index", a.init_index);
  s.take("--horizon", "horizon", a.horizon);
  s.take("--members", "members", a.members);
  s.take("--n-infer", "n_infer", a.n_infer);
  s.take("--steps", "steps", a.steps);
  s.take("--schedule", "schedule", a.schedule);
  s.take("--coupling", "coupling", a.coupling);
  s.take("--climatology", "climatology", a.climatology);
  s.take("--archive-plans", "archive_plans", a.archive_plans);
  s.take("--no-write-members", "no_write_members", a.no_write_members);
  s.take("--ablation", "ablation", a.ablation);
  s.take("--ablation-members", "ablation_members", a.ablation_members);
  if (a.input.empty()) throw ValidationError("--input is required");

  RolloutConfig rc{a.horizon, a.members, a.n_infer, seed};
  rc.validate();
  PipelineConfig pc = pipeline_config(s, seed, a.steps, a.schedule, a.coupling);

  SeriesReader series(a.input);
  if (a.init_index < 1 || static_cast<std::size_t>(a.init_index) >= series.size())
    throw ValidationError("--init-index must lie in [1, " + std::to_string(series.size() - 1) + "]");
  const FieldSet prev = series.read(static_cast<std::size_t>(a.init_index - 1));
  const FieldSet cur = series.read(static_cast<std::size_t>(a.init_index));

  Pipeline pipeline(pc, cur.grid, cur.channels);
  if (!a.climatology.empty()) {
    const Climatology clim = read_climatology(a.climatology);
    FieldSet probe{clim.grid, clim.channels, {}, {}};
    require_compatible(probe, cur, "climatology vs input");
    pipeline.set_anchor(climatology_state(clim, cur.valid_time));
  }
  s.effective["pipeline"] = pipeline.config().to_json();
  s.effective["schedule_json"] = pipeline.schedule().to_json();

  const fs::path out = prepare_out(common);
  if (!a.no_write_members) fs::create_directories(out / "members");
  const bool archive = a.archive_plans && pc.denoiser.coupling != CouplingKind::none;
  if (archive) fs::create_directories(out / "plans");
  const auto comp = pipeline.components();
  Tensor z_prev, z_cur;
  if (archive) {
    z_prev = embed(prev, comp.coder_a, comp.coder_b, comp.book_a, comp.book_b).stacked();
    z_cur = embed(cur, comp.coder_a, comp.coder_b, comp.book_a, comp.book_b).stacked();
  }
  FileSink sink(out / "members", cur.valid_time, !a.no_write_members, archive ? &pipeline.denoiser() : nullptr,
                std::move(z_prev), std::move(z_cur), out / "plans");
  EnsembleOptions opt;
  opt.keep_members = false;
  opt.sink = &sink;
  const EnsembleForecast f = rollout_ensemble(prev, cur, rc, comp, opt);

  std::vector<std::string> outputs = sink.outputs;
  if (a.ablation) {
    AblationConfig ac;
    ac.pipeline = pc;
    ac.rollout = RolloutConfig{28, a.ablation_members, a.n_infer, seed};
    std::vector<FieldSet> truth;
    for (int d = 1; d <= 28; ++d) {
      const auto t = static_cast<std::size_t>(a.init_index + d);
      if (t >= series.size()) throw ValidationError("--ablation needs 28 days of input after the initial state");
      truth.push_back(series.read(t));
    }
    const auto rows = coupling_ablation(prev, cur, truth, ac);
    CsvWriter csv(out / "ablation.csv", {"variant", "channel", "week4_crps"});
    for (const auto& r : rows) csv.row({r.variant, r.channel, format_number(r.crps)});
    csv.close();
    write_json_file(out / "ablation.csv.json",
                    {{"lead_days", {ac.first_day, ac.last_day}}, {"members", ac.rollout.n_members},
                     {"conventions", conventions()}});
    outputs.push_back("ablation.csv");
  }

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& fl : f.failures)
    failures.push_back({{"member_id", fl.member_id}, {"category", fl.category}, {"message", fl.message}});
  write_manifest(out, "rollout", s.effective, outputs,
                 {{"init_date", format_date(f.init_date)},
                  {"horizon_days", rc.horizon_days},
                  {"n_members", rc.n_members},
                  {"member_seeds", f.seeds},
                  {"channels", channels_to_json(f.channels)},
                  {"grid", grid_to_json(f.grid)},
                  {"failures", failures}});
  return 0;
}

// ------------------------------------------------------------- evaluate

struct EvalArgs {
  std::string forecast;
  std::string truth;
  std::string climatology;
  std::string forecast_climatology;
  std::string channels;
  bool fair = false;
  bool no_inflation = false;
};

int cmd_evaluate(CLI::App* sub, const Common& common, EvalArgs a) {
  Settings s(sub, common);
  s.take("--forecast", "forecast", a.forecast);
  s.take("--truth", "truth", a.truth);
  s.take("--climatology", "climatology", a.climatology);
  s.take("--forecast-climatology", "forecast_climatology", a.forecast_climatology);
  s.take("--channels", "channels", a.channels);
  s.take("--fair", "fair", a.fair);
  s.take("--no-inflation", "no_inflation", a.no_inflation);
  if (a.forecast.empty() || a.truth.empty()) throw ValidationError("--forecast and --truth are required");

  auto members = open_forecast(a.forecast);
  SeriesReader truth(a.truth);
  require_same_channels(members.front()->channels(), truth.channels(), "forecast vs truth");
  const auto idx = date_index(truth);
  const auto channels = resolve_channels(truth.channels(), a.channels);
  std::unique_ptr<Climatology> clim, fclim;
  if (!a.climatology.empty()) clim = std::make_unique<Climatology>(read_climatology(a.climatology));
  if (!a.forecast_climatology.empty())
    fclim = std::make_unique<Climatology>(read_climatology(a.forecast_climatology));

  const fs::path out = prepare_out(common);
  CsvWriter csv(out / "report.csv", {"variable", "lead_day", "metric", "value"});
  std::size_t undefined = 0;
  for (std::size_t t = 0; t < members.front()->size(); ++t) {
    std::vector<FieldSet> ens;
    for (auto& m : members) ens.push_back(m->read(t));
    const FieldSet obs = truth.read(lookup(idx, ens.front().valid_time, "truth"));
    const FieldSet mean = ensemble_mean(ens);
    const std::string lead = std::to_string(lead_day(*members.front(), t));
    for (std::size_t c : channels) {
      const std::string& var = obs.channels[c].name;
      csv.row({var, lead, "crps", format_number(field_crps(ens, obs, c, a.fair))});
      csv.row({var, lead, "rmse", format_number(field_wrmse(std::span(&mean, 1), std::span(&obs, 1), c))});
      if (ens.size() >= 2) {
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
          v = field_ssr(EnsembleSeries{ens}, std::span(&obs, 1), c, !a.no_inflation);
        } catch (const ValidationError&) {
          ++undefined;
        }
        csv.row({var, lead, "ssr", format_number(v)});
      }
      if (clim) {
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
          v = field_acc(std::span(&mean, 1), std::span(&obs, 1), fclim ? *fclim : *clim, *clim, c);
        } catch (const ValidationError&) {
          ++undefined;
        }
        csv.row({var, lead, "acc", format_number(v)});
      }
    }
  }
  csv.close();
  const nlohmann::json meta{{"members", members.size()},
                            {"crps_estimator", a.fair ? "fair" : "standard"},
                            {"ssr_inflation", !a.no_inflation},
                            {"undefined_values", undefined},
                            {"conventions", conventions()}};
  write_json_file(out / "report.csv.json", meta);
  write_manifest(out, "evaluate", s.effective, {"report.csv"});
  return 0;
}

// ------------------------------------------------------------- extremes

struct ExtremesArgs {
  std::string forecast;
  std::string truth;
  std::string pool;
  std::string percentiles = "95,99";
  int halfwidth = 15;
  std::string channels;
};

int cmd_extremes(CLI::App* sub, const Common& common, ExtremesArgs a) {
  Settings s(sub, common);
  s.take("--forecast", "forecast", a.forecast);
  s.take("--truth", "truth", a.truth);
  s.take("--pool", "pool", a.pool);
  s.take("--percentiles", "percentiles", a.percentiles);
  s.take("--halfwidth", "halfwidth", a.halfwidth);
  s.take("--channels", "channels", a.channels);
  if (a.forecast.empty() || a.truth.empty() || a.pool.empty())
    throw ValidationError("--forecast, --truth and --pool are required");
  std::vector<double> ps;
  for (const auto& p : split_list(a.percentiles)) {
    try {
      ps.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw ValidationError("bad percentile '" + p + "'");
    }
  }
  if (ps.empty()) throw ValidationError("--percentiles is empty");

  auto members = open_forecast(a.forecast);
  SeriesReader truth(a.truth);
  require_same_channels(members.front()->channels(), truth.channels(), "forecast vs truth");
  const auto idx = date_index(truth);
  const auto channels = resolve_channels(truth.channels(), a.channels);
  const auto pool = read_series(a.pool);
  std::set<int> slot_set;
  for (const Date& d : members.front()->dates()) slot_set.insert(calendar_slot(d));
  const std::vector<int> slots(slot_set.begin(), slot_set.end());

  std::vector<ThresholdField> thresholds;
  for (double p : ps) thresholds.push_back(percentile_thresholds(pool, p, a.halfwidth, slots));

  const fs::path out = prepare_out(common);
  CsvWriter csv(out / "extremes.csv", {"variable", "lead_day", "percentile", "bss", "used_points", "excluded_points"});
  for (std::size_t t = 0; t < members.front()->size(); ++t) {
    std::vector<FieldSet> ens;
    for (auto& m : members) ens.push_back(m->read(t));
    const FieldSet obs = truth.read(lookup(idx, ens.front().valid_time, "truth"));
    const std::string lead = std::to_string(lead_day(*members.front(), t));
    for (const auto& th : thresholds)
      for (std::size_t c : channels) {
        const BssResult r = field_bss(EnsembleSeries{ens}, std::span(&obs, 1), th, c);
        csv.row({obs.channels[c].name, lead, format_number(th.percentile), format_number(r.bss),
                 std::to_string(r.used_points), std::to_string(r.excluded_points)});
      }
  }
  csv.close();
  nlohmann::json low = nlohmann::json::object();
  for (const auto& th : thresholds) low[format_number(th.percentile)] = th.low_confidence_slots;
  write_json_file(out / "extremes.csv.json", {{"members", members.size()},
                                              {"quantile_rule", "linear, h = (n-1) p / 100"},
                                              {"pool_halfwidth_days", a.halfwidth},
                                              {"pool_sizes", thresholds.front().pool_sizes},
                                              {"low_confidence_slots", low},
                                              {"conventions", conventions()}});
  write_manifest(out, "extremes", s.effective, {"extremes.csv"});
  return 0;
}

// ------------------------------------------------------------------ pim

struct PimArgs {
  std::string input;
  int init_index = 1;
  int horizon = 28;
  int members = 11;
  std::string runner = "synthetic";
  std::string targets;
  std::string groups;
  std::string shuffle = "spatial";
  int n_infer = 15;
  int steps = 1000;
};

int cmd_pim(CLI::App* sub, const Common& common, PimArgs a) {
  Settings s(sub, common);
  std::uint64_t seed = common.seed;
  s.take("--seed", "seed", seed);
  s.take("--input", "input", a.input);
  s.take("--init-index", "init_index", a.init_index);
  s.take("--horizon", "horizon", a.horizon);
  s.take("--members", "members", a.members);
  s.take("--runner", "runner", a.runner);
  s.take("--targets", "targets", a.targets);
  s.take("--groups", "groups", a.groups);
  s.take("--shuffle", "shuffle", a.shuffle);
  s.take("--n-infer", "n_infer", a.n_infer);
  s.take("--steps", "steps", a.steps);
  if (a.input.empty()) throw ValidationError("--input is required");
  if (a.horizon < 1) throw ValidationError("--horizon must be >= 1");

  SeriesReader series(a.input);
  if (a.init_index < 1 || static_cast<std::size_t>(a.init_index + a.horizon) >= series.size() + 0)
    if (static_cast<std::size_t>(a.init_index + a.horizon) >= series.size() || a.init_index < 1)
      throw ValidationError("--init-index and --horizon must fit inside the input series");
  const FieldSet prev = series.read(static_cast<std::size_t>(a.init_index - 1));
  const FieldSet cur = series.read(static_cast<std::size_t>(a.init_index));
  std::vector<FieldSet> truth;
  for (int d = 1; d <= a.horizon; ++d) truth.push_back(series.read(static_cast<std::size_t>(a.init_index + d)));

  std::vector<PredictorGroup> groups = default_groups(cur.channels);
  if (!a.groups.empty()) {
    std::vector<PredictorGroup> chosen;
    for (const auto& name : split_list(a.groups)) chosen.push_back(find_group(groups, name));
    groups = std::move(chosen);
  }
  PimOptions opt;
  opt.members = a.members;
  opt.seed = seed;
  opt.mode = parse_shuffle_mode(a.shuffle);
  opt.targets = split_list(a.targets);

  std::unique_ptr<ForecastRunner> runner;
  std::unique_ptr<Pipeline> pipeline;
  if (a.runner == "synthetic") {
    const auto& meta = series.sidecar();
    if (!meta.contains("synth_config"))
      throw ValidationError("the synthetic runner needs a series written by 'synth' (no synth_config in sidecar)");
    auto r = std::make_unique<SyntheticResponseRunner>(SynthConfig::from_json(meta.at("synth_config")), a.horizon);
    if (opt.targets.empty()) opt.targets = r->targets();
    runner = std::move(r);
  } else if (a.runner == "rollout") {
    PipelineConfig pc = pipeline_config(s, seed, a.steps, "linear", "optimal_transport");
    pipeline = std::make_unique<Pipeline>(pc, cur.grid, cur.channels);
    s.effective["pipeline"] = pipeline->config().to_json();
    runner = std::make_unique<RolloutRunner>(RolloutConfig{a.horizon, a.members, a.n_infer, seed},
                                             pipeline->components());
    if (opt.targets.empty()) opt.targets = {"T2M"};
  } else {
    throw ValidationError("unknown runner '" + a.runner + "' (expected synthetic or rollout)");
  }
  s.effective["targets_resolved"] = opt.targets;

  const PimReport report = pim(*runner, prev, cur, truth, groups, opt);
  const fs::path out = prepare_out(common);
  CsvWriter csv(out / "pim.csv", {"group", "mean_rmse_increase", "std", "baseline_rmse"});
  for (const auto& e : report.entries)
    csv.row({e.group, format_number(e.mean_increase), format_number(e.std_increase), format_number(e.baseline_rmse)});
  csv.close();
  write_json_file(out / "pim.csv.json", {{"shuffle", to_string(report.mode)},
                                         {"shuffle_times", "both initial states, same permutation"},
                                         {"members", a.members},
                                         {"targets", opt.targets},
                                         {"conventions", conventions()}});
  write_manifest(out, "pim", s.effective, {"pim.csv"});
  return 0;
}

// ------------------------------------------------------------- sinkhorn

struct SinkhornArgs {
  std::string cost;
  int rows = 0;
  int cols = 0;
  double epsilon = 0.05;
  int max_iter = 1000;
  double tol = 1e-6;
  std::string marginals = "uniform";
};

int cmd_sinkhorn(CLI::App* sub, const Common& common, SinkhornArgs a) {
  Settings s(sub, common);
  std::uint64_t seed = common.seed;
  s.take("--seed", "seed", seed);
  s.take("--cost", "cost", a.cost);
  s.take("--rows", "rows", a.rows);
  s.take("--cols", "cols", a.cols);
  s.take("--epsilon", "epsilon", a.epsilon);
  s.take("--max-iter", "max_iter", a.max_iter);
  s.take("--tol", "tol", a.tol);
  s.take("--marginals", "marginals", a.marginals);
  CostMatrix cost;
  if (!a.cost.empty()) {
    const TensorFile f = read_tensor(a.cost);
    if (f.data.rank() != 2) throw ValidationError("cost tensor must be rank 2, got " + shape_string(f.data.shape()));
    cost.values = Eigen::Map<const Matrix>(f.data.data(), static_cast<Eigen::Index>(f.data.dim(0)),
                                           static_cast<Eigen::Index>(f.data.dim(1)));
  } else {
    if (a.rows < 1) throw ValidationError("give --cost or --rows (and optionally --cols)");
    const int cols = a.cols > 0 ? a.cols : a.rows;
    cost.values.resize(a.rows, cols);
    Rng rng(derive_seed(seed, stream_id("cli/sinkhorn/cost")));
    for (Eigen::Index i = 0; i < cost.values.size(); ++i) cost.values.data()[i] = 2.0 * rng.uniform();
  }
  if (a.marginals != "uniform") throw ValidationError("only uniform marginals are available from the command line");
  const auto ma = uniform_marginal(static_cast<std::size_t>(cost.values.rows()));
  const auto mb = uniform_marginal(static_cast<std::size_t>(cost.values.cols()));
  const TransportPlan p = sinkhorn(cost, ma, mb, {a.epsilon, a.max_iter, a.tol});

  const fs::path out = prepare_out(common);
  Tensor data({static_cast<std::size_t>(p.plan.rows()), static_cast<std::size_t>(p.plan.cols())},
              std::vector<double>(p.plan.data(), p.plan.data() + p.plan.size()));
  const nlohmann::json info{{"kind", "transport_plan"}, {"epsilon", p.epsilon},        {"iterations", p.iterations},
                            {"converged", p.converged},  {"marginal_error", p.marginal_error}};
  write_tensor((out / "plan.s2sk").string(), data, DType::f64, info);
  write_json_file(out / "sinkhorn.json", info);
  write_manifest(out, "sinkhorn", s.effective, {"plan.s2sk", "sinkhorn.json"});
  return 0;
}

// ----------------------------------------------------------------- wmid

struct WmidArgs {
  std::vector<std::string> plans;
  std::string region;
  double percentile = 50.0;
  std::string grid;
};

int cmd_wmid(CLI::App* sub, const Common& common, WmidArgs a) {
  Settings s(sub, common);
  s.take("--plan", "plans", a.plans);
  s.take("--region", "region", a.region);
  s.take("--percentile", "percentile", a.percentile);
  s.take("--grid", "grid", a.grid);
  if (a.plans.empty()) throw ValidationError("--plan is required");
  const auto parts = split_list(a.region);
  if (parts.size() != 4) throw ValidationError("--region expects lat_min,lat_max,lon_min,lon_max");
  RegionBox box;
  try {
    box = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2]), std::stod(parts[3])};
  } catch (const std::exception&) {
    throw ValidationError("--region values must be numbers");
  }
  box.validate();

  const fs::path out = prepare_out(common);
  CsvWriter csv(out / "wmid.csv", {"init", "lead", "wmid_km"});
  for (const auto& path : a.plans) {
    const TensorFile f = read_tensor(path);
    if (f.data.rank() != 2) throw ValidationError(path + ": plan must be rank 2");
    GridSpec grid;
    if (!a.grid.empty()) grid = named_grid(a.grid);
    else if (!f.sidecar.is_null() && f.sidecar.contains("grid")) grid = grid_from_json(f.sidecar.at("grid"));
    else throw ValidationError(path + ": no grid in the sidecar; pass --grid");
    const Matrix plan = Eigen::Map<const Matrix>(f.data.data(), static_cast<Eigen::Index>(f.data.dim(0)),
                                                 static_cast<Eigen::Index>(f.data.dim(1)));
    const double km = wmid(plan, grid, box, a.percentile);
    const std::string init = f.sidecar.is_object() ? f.sidecar.value("init_date", std::string("")) : "";
    const std::string lead =
        f.sidecar.is_object() && f.sidecar.contains("lead_day") ? std::to_string(f.sidecar.at("lead_day").get<int>()) : "";
    csv.row({init, lead, format_number(km)});
  }
  csv.close();
  write_manifest(out, "wmid", s.effective, {"wmid.csv"});
  return 0;
}

// --------------------------------------------------------------- report

struct ReportArgs {
  std::string model;
  std::string baseline;
  std::string metric = "crps";
  bool higher_better = false;
};

MetricTable load_metric(const std::string& path, const std::string& metric) {
  const CsvTable t = read_csv(path);
  const std::size_t cv = t.column("variable"), cl = t.column("lead_day"), cm = t.column("metric"),
                    cval = t.column("value");
  MetricTable m;
  for (const auto& r : t.rows) {
    if (r[cm] != metric) continue;
    try {
      m[{r[cv], std::stoi(r[cl])}] = r[cval] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(r[cval]);
    } catch (const std::exception&) {
      throw ValidationError(path + ": bad numeric cell in row for " + r[cv]);
    }
  }
  return m;
}

int cmd_report(CLI::App* sub, const Common& common, ReportArgs a) {
  Settings s(sub, common);
  s.take("--model", "model", a.model);
  s.take("--baseline", "baseline", a.baseline);
  s.take("--metric", "metric", a.metric);
  s.take("--higher-better", "higher_better", a.higher_better);
  if (a.model.empty() || a.baseline.empty()) throw ValidationError("--model and --baseline are required");
  const Scorecard sc = scorecard(load_metric(a.model, a.metric), load_metric(a.baseline, a.metric), !a.higher_better);
  const fs::path out = prepare_out(common);
  std::vector<std::string> header{"variable"};
  for (int l : sc.leads) header.push_back("day_" + std::to_string(l));
  CsvWriter csv(out / "scorecard.csv", header);
  for (std::size_t v = 0; v < sc.variables.size(); ++v) {
    std::vector<std::string> row{sc.variables[v]};
    for (const auto& cell : sc.cells[v]) row.push_back(cell.render());
    csv.row(row);
  }
  csv.close();
  write_json_file(out / "scorecard.csv.json",
                  {{"metric", a.metric},
                   {"relative_score", a.higher_better ? "(model - baseline) / |baseline|" : "(baseline - model) / baseline"},
                   {"units", "percent"},
                   {"positive_means", "model better"},
                   {"conventions", conventions()}});
  write_manifest(out, "report", s.effective, {"scorecard.csv"});
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Multi-sphere subseasonal ensemble toolkit"};
  app.require_subcommand(1);
  Common common;

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic multi-sphere series");
  add_common(s_synth, common);
  s_synth->add_option("--days", synth.days, "Number of days");
  s_synth->add_option("--grid", synth.grid, "desk or fine");
  s_synth->add_option("--inventory", synth.inventory, "full or compact");
  s_synth->add_option("--start", synth.start, "First date, YYYY-MM-DD");
  s_synth->add_option("--dtype", synth.dtype, "f32 or f64");

  ClimArgs clim;
  auto* s_clim = app.add_subcommand("climatology", "Per-calendar-day climatology of a series");
  add_common(s_clim, common);
  s_clim->add_option("--input", clim.input, "Series file");
  s_clim->add_option("--halfwidth", clim.halfwidth, "Window halfwidth in days");
  s_clim->add_option("--dtype", clim.dtype, "f32 or f64");

  RolloutArgs roll;
  auto* s_roll = app.add_subcommand("rollout", "Ensemble rollout with the reference pipeline");
  add_common(s_roll, common);
  s_roll->add_option("--input", roll.input, "Series file holding the initial states");
  s_roll->add_option("--init-index", roll.init_index, "Index of the latest initial state");
  s_roll->add_option("--horizon", roll.horizon, "Lead days");
  s_roll->add_option("--members", roll.members, "Ensemble size");
  s_roll->add_option("--n-infer", roll.n_infer, "Denoising iterations per day");
  s_roll->add_option("--steps", roll.steps, "Diffusion steps N");
  s_roll->add_option("--schedule", roll.schedule, "linear or cosine");
  s_roll->add_option("--coupling", roll.coupling, "optimal_transport, cross_attention or none");
  s_roll->add_option("--climatology", roll.climatology, "Climatology file used as the persistence anchor");
  s_roll->add_flag("--archive-plans", roll.archive_plans, "Write member-0 transport plans");
  s_roll->add_flag("--no-write-members", roll.no_write_members, "Do not write member files");
  s_roll->add_flag("--ablation", roll.ablation, "Also run the coupling ablation (week-4 CRPS)");
  s_roll->add_option("--ablation-members", roll.ablation_members, "Ensemble size for the ablation");

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("evaluate", "CRPS, RMSE, SSR and ACC per lead day");
  add_common(s_eval, common);
  s_eval->add_option("--forecast", eval.forecast, "Member directory or series file");
  s_eval->add_option("--truth", eval.truth, "Verifying series");
  s_eval->add_option("--climatology", eval.climatology, "Reference climatology (enables ACC)");
  s_eval->add_option("--forecast-climatology", eval.forecast_climatology, "The model's own climatology");
  s_eval->add_option("--channels", eval.channels, "Comma-separated channel names");
  s_eval->add_flag("--fair", eval.fair, "Fair CRPS estimator");
  s_eval->add_flag("--no-inflation", eval.no_inflation, "SSR without the (M+1)/M factor");

  ExtremesArgs ext;
  auto* s_ext = app.add_subcommand("extremes", "Brier skill scores at percentile thresholds");
  add_common(s_ext, common);
  s_ext->add_option("--forecast", ext.forecast, "Member directory or series file");
  s_ext->add_option("--truth", ext.truth, "Verifying series");
  s_ext->add_option("--pool", ext.pool, "Climatological sample series for thresholds");
  s_ext->add_option("--percentiles", ext.percentiles, "Comma-separated percentiles");
  s_ext->add_option("--halfwidth", ext.halfwidth, "Pooling window halfwidth in days");
  s_ext->add_option("--channels", ext.channels, "Comma-separated channel names");

  PimArgs pim_args;
  auto* s_pim = app.add_subcommand("pim", "Perturbation importance of predictor groups");
  add_common(s_pim, common);
  s_pim->add_option("--input", pim_args.input, "Series file");
  s_pim->add_option("--init-index", pim_args.init_index, "Index of the latest initial state");
  s_pim->add_option("--horizon", pim_args.horizon, "Lead days scored");
  s_pim->add_option("--members", pim_args.members, "Ensemble size");
  s_pim->add_option("--runner", pim_args.runner, "synthetic or rollout");
  s_pim->add_option("--targets", pim_args.targets, "Comma-separated scored channels");
  s_pim->add_option("--groups", pim_args.groups, "Comma-separated group names (default: all)");
  s_pim->add_option("--shuffle", pim_args.shuffle, "spatial or joint");
  s_pim->add_option("--n-infer", pim_args.n_infer, "Denoising iterations per day (rollout runner)");
  s_pim->add_option("--steps", pim_args.steps, "Diffusion steps N (rollout runner)");

  SinkhornArgs sk;
  auto* s_sk = app.add_subcommand("sinkhorn", "Entropic transport plan for a cost matrix");
  add_common(s_sk, common);
  s_sk->add_option("--cost", sk.cost, "Rank-2 cost tensor file");
  s_sk->add_option("--rows", sk.rows, "Random cost rows (when no --cost)");
  s_sk->add_option("--cols", sk.cols, "Random cost columns");
  s_sk->add_option("--epsilon", sk.epsilon, "Entropic regularisation");
  s_sk->add_option("--max-iter", sk.max_iter, "Iteration cap");
  s_sk->add_option("--tol", sk.tol, "Marginal tolerance");
  s_sk->add_option("--marginals", sk.marginals, "uniform");

  WmidArgs wm;
  auto* s_wm = app.add_subcommand("wmid", "Weighted mean influencing distance of transport plans");
  add_common(s_wm, common);
  s_wm->add_option("--plan", wm.plans, "Plan file (repeatable)");
  s_wm->add_option("--region", wm.region, "lat_min,lat_max,lon_min,lon_max");
  s_wm->add_option("--percentile", wm.percentile, "Retention percentile");
  s_wm->add_option("--grid", wm.grid, "Grid name when the plan has no grid metadata");

  ReportArgs rep;
  auto* s_rep = app.add_subcommand("report", "Relative-improvement scorecard");
  add_common(s_rep, common);
  s_rep->add_option("--model", rep.model, "Model report.csv");
  s_rep->add_option("--baseline", rep.baseline, "Baseline report.csv");
  s_rep->add_option("--metric", rep.metric, "Metric name");
  s_rep->add_flag("--higher-better", rep.higher_better, "Metric is positively oriented");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << one_line(e.what()) << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*s_synth) return cmd_synth(s_synth, common, synth);
    if (*s_clim) return cmd_climatology(s_clim, common, clim);
    if (*s_roll) return cmd_rollout(s_roll, common, roll);
    if (*s_eval) return cmd_evaluate(s_eval, common, eval);
    if (*s_ext) return cmd_extremes(s_ext, common, ext);
    if (*s_pim) return cmd_pim(s_pim, common, pim_args);
    if (*s_sk) return cmd_sinkhorn(s_sk, common, sk);
    if (*s_wm) return cmd_wmid(s_wm, common, wm);
    if (*s_rep) return cmd_report(s_rep, common, rep);
  } catch (const Error& e) {
    std::cerr << "error: category=" << e.category() << " message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: category=io message=" << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"s2sk"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace s2sk::cli
