#include "s2sk/attribution.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "s2sk/error.hpp"
#include "s2sk/stats.hpp"
#include "s2sk/verify.hpp"

namespace s2sk {

namespace {

bool is_level_name(const std::string& name, char family) {
  if (name.size() < 2 || name.size() > 5 || name[0] != family) return false;
  if (!std::all_of(name.begin() + 1, name.end(), [](unsigned char c) { return std::isdigit(c); })) return false;
  const int level = std::stoi(name.substr(1));
  return std::find(std::begin(kPressureLevels), std::end(kPressureLevels), level) != std::end(kPressureLevels);
}

std::vector<std::size_t> valid_cells(const FieldSet& x, std::size_t c) {
  std::vector<std::size_t> idx;
  const auto& valid = x.channels[c].valid;
  for (std::size_t k = 0; k < x.grid.cells(); ++k)
    if (!valid || (*valid)[k]) idx.push_back(k);
  return idx;
}

// Fisher-Yates with the portable bounded draw.
void permute(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
}

void check_group(const FieldSet& x, const PredictorGroup& group) {
  for (std::size_t c : group.channels)
    if (c >= x.channel_count())
      throw ValidationError("group '" + group.name + "' names channel " + std::to_string(c) + " of " +
                            std::to_string(x.channel_count()));
}

// Applies the same permutation plan to every state in `states`.
std::vector<FieldSet> shuffle_states(std::vector<const FieldSet*> states, const PredictorGroup& group, Rng& rng,
                                     ShuffleMode mode) {
  const FieldSet& ref = *states.front();
  check_group(ref, group);
  std::vector<FieldSet> out;
  for (const auto* s : states) out.push_back(*s);
  if (mode == ShuffleMode::spatial) {
    for (std::size_t c : group.channels) {
      const auto cells = valid_cells(ref, c);
      std::vector<std::size_t> order(cells.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      permute(order, rng);
      for (std::size_t s = 0; s < states.size(); ++s) {
        const auto src = states[s]->channel(c);
        auto dst = out[s].channel(c);
        for (std::size_t i = 0; i < cells.size(); ++i) dst[cells[i]] = src[cells[order[i]]];
      }
    }
  } else {
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (channel, cell)
    for (std::size_t c : group.channels)
      for (std::size_t k : valid_cells(ref, c)) slots.emplace_back(c, k);
    std::vector<std::size_t> order(slots.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    permute(order, rng);
    for (std::size_t s = 0; s < states.size(); ++s)
      for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto [dc, dk] = slots[i];
        const auto [sc, sk] = slots[order[i]];
        out[s].channel(dc)[dk] = states[s]->channel(sc)[sk];
      }
  }
  return out;
}

double member_rmse(const std::vector<FieldSet>& forecast, std::span<const FieldSet> truth,
                   const std::vector<std::string>& targets) {
  if (forecast.size() != truth.size())
    throw ValidationError("PIM: forecast has " + std::to_string(forecast.size()) + " leads, truth has " +
                          std::to_string(truth.size()));
  std::vector<double> f, o, w;
  for (std::size_t l = 0; l < forecast.size(); ++l) {
    if (forecast[l].grid != truth[l].grid) throw ValidationError("PIM: forecast and truth grids differ");
    for (const auto& name : targets) {
      const std::size_t cf = forecast[l].channel_index(name);
      const std::size_t ct = truth[l].channel_index(name);
      const auto& valid = truth[l].channels[ct].valid;
      const auto cw = cell_weights(truth[l].grid, valid.get());
      for (std::size_t k = 0; k < cw.size(); ++k) {
        if (cw[k] == 0.0) continue;
        f.push_back(forecast[l].channel(cf)[k]);
        o.push_back(truth[l].channel(ct)[k]);
        w.push_back(cw[k]);
      }
    }
  }
  return wrmse(f, o, w);
}

}  // namespace

std::vector<PredictorGroup> default_groups(const std::vector<Channel>& channels) {
  std::vector<PredictorGroup> g{{"Q", {}}, {"T", {}},   {"U", {}},    {"V", {}},   {"Z", {}},
                                {"Sfc", {}}, {"Ocean", {}}, {"Land", {}}, {"Flux", {}}};
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& ch = channels[c];
    switch (ch.sphere) {
      case Sphere::ocean: g[6].channels.push_back(c); continue;
      case Sphere::land: g[7].channels.push_back(c); continue;
      case Sphere::flux: g[8].channels.push_back(c); continue;
      case Sphere::atmosphere: break;
    }
    std::size_t family = 5;
    for (std::size_t f = 0; f < 5; ++f)
      if (is_level_name(ch.name, "QTUVZ"[f])) family = f;
    g[family].channels.push_back(c);
  }
  return g;
}

void validate_groups(const std::vector<PredictorGroup>& groups, std::size_t channel_count) {
  std::set<std::string> names;
  std::vector<const PredictorGroup*> owner(channel_count, nullptr);
  for (const auto& g : groups) {
    if (!names.insert(g.name).second) throw ValidationError("duplicate predictor group '" + g.name + "'");
    for (std::size_t c : g.channels) {
      if (c >= channel_count)
        throw ValidationError("group '" + g.name + "' names channel " + std::to_string(c) + " of " +
                              std::to_string(channel_count));
      if (owner[c])
        throw ValidationError("groups '" + owner[c]->name + "' and '" + g.name + "' overlap at channel " +
                              std::to_string(c));
      owner[c] = &g;
    }
  }
}

const PredictorGroup& find_group(const std::vector<PredictorGroup>& groups, std::string_view name) {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw ValidationError("unknown predictor group '" + std::string(name) + "'");
}

std::string_view to_string(ShuffleMode m) { return m == ShuffleMode::spatial ? "spatial" : "joint"; }

ShuffleMode parse_shuffle_mode(std::string_view s) {
  if (s == "spatial") return ShuffleMode::spatial;
  if (s == "joint") return ShuffleMode::joint;
  throw ValidationError("unknown shuffle mode '" + std::string(s) + "'");
}

FieldSet shuffle_group(const FieldSet& x, const PredictorGroup& group, Rng& rng, ShuffleMode mode) {
  return std::move(shuffle_states({&x}, group, rng, mode).front());
}

std::pair<FieldSet, FieldSet> shuffle_initial_states(const FieldSet& previous, const FieldSet& current,
                                                     const PredictorGroup& group, Rng& rng, ShuffleMode mode) {
  require_compatible(previous, current, "initial states");
  auto out = shuffle_states({&previous, &current}, group, rng, mode);
  return {std::move(out[0]), std::move(out[1])};
}

std::vector<std::vector<FieldSet>> RolloutRunner::run(const FieldSet& previous, const FieldSet& current,
                                                      int members, std::uint64_t master_seed) const {
  RolloutConfig cfg = config_;
  cfg.n_members = members;
  cfg.master_seed = master_seed;
  EnsembleForecast f = rollout_ensemble(previous, current, cfg, components_);
  if (!f.failures.empty())
    throw NumericalError("member " + std::to_string(f.failures.front().member_id) +
                         " failed: " + f.failures.front().message);
  return std::move(f.members);
}

SyntheticResponseRunner::SyntheticResponseRunner(SynthConfig config, int horizon_days, double member_spread)
    : config_(config), horizon_(horizon_days), spread_(member_spread), model_(std::move(config)) {
  if (horizon_ < 1) throw ValidationError("runner horizon must be >= 1");
  if (config_.couplings.empty()) throw ValidationError("synthetic runner needs at least one coupling link");
  if (!(spread_ >= 0.0)) throw ValidationError("member spread must be non-negative");
}

std::vector<std::string> SyntheticResponseRunner::targets() const {
  std::vector<std::string> t;
  for (const auto& l : config_.couplings)
    if (std::find(t.begin(), t.end(), l.target) == t.end()) t.push_back(l.target);
  return t;
}

std::vector<std::vector<FieldSet>> SyntheticResponseRunner::run(const FieldSet& previous, const FieldSet& current,
                                                                int members, std::uint64_t master_seed) const {
  (void)previous;
  if (members < 1) throw ValidationError("ensemble needs at least one member");
  const auto target_names = targets();
  std::vector<std::size_t> target_idx;
  for (const auto& n : target_names) target_idx.push_back(current.channel_index(n));
  const FieldSet out_template = select_channels(current, target_idx);
  const std::size_t cells = current.grid.cells();
  const auto& spec_channels = model_.channels();
  auto model_index = [&](const std::string& n) {
    for (std::size_t c = 0; c < spec_channels.size(); ++c)
      if (spec_channels[c].name == n) return c;
    throw ValidationError("channel '" + n + "' is not produced by the synthetic configuration");
  };
  auto anomaly = [&](const std::string& n) {
    const std::size_t c = current.channel_index(n);
    const auto det = model_.deterministic(model_index(n), current.valid_time);
    std::vector<double> a(cells);
    for (std::size_t k = 0; k < cells; ++k) {
      const double v = current.channel(c)[k];
      a[k] = std::isnan(v) ? 0.0 : v - det[k];
    }
    return a;
  };

  // Ensemble-mean forecast per lead and target.
  std::vector<std::vector<std::vector<double>>> mean(static_cast<std::size_t>(horizon_));
  for (std::size_t t = 0; t < target_names.size(); ++t) {
    const std::string& name = target_names[t];
    const double rho_t = config_.atmosphere.ar1;
    std::vector<double> a_t = anomaly(name);
    std::vector<std::pair<std::vector<double>, const CouplingLink*>> drivers;
    for (const auto& l : config_.couplings)
      if (l.target == name) drivers.emplace_back(anomaly(l.driver), &l);
    // Own-noise part of the target anomaly.
    std::vector<double> own = a_t;
    for (const auto& [a_d, l] : drivers) {
      const double rho_d = config_.dynamics(spec_channels[model_index(l->driver)].sphere).ar1;
      const double back = l->gain * std::pow(rho_d, l->lag_days);
      for (std::size_t k = 0; k < cells; ++k) own[k] -= back * a_d[k];
    }
    for (int lead = 1; lead <= horizon_; ++lead) {
      const auto det = model_.deterministic(model_index(name), add_days(current.valid_time, lead));
      std::vector<double> f(cells);
      const double decay = std::pow(rho_t, lead);
      for (std::size_t k = 0; k < cells; ++k) f[k] = det[k] + decay * own[k];
      for (const auto& [a_d, l] : drivers) {
        const double rho_d = config_.dynamics(spec_channels[model_index(l->driver)].sphere).ar1;
        const double w = l->gain * std::pow(rho_d, std::abs(lead - l->lag_days));
        for (std::size_t k = 0; k < cells; ++k) f[k] += w * a_d[k];
      }
      mean[static_cast<std::size_t>(lead - 1)].push_back(std::move(f));
    }
  }

  std::vector<std::vector<FieldSet>> out(static_cast<std::size_t>(members));
  for (int m = 0; m < members; ++m) {
    Rng rng(member_seed(master_seed, m));
    auto& traj = out[static_cast<std::size_t>(m)];
    for (int lead = 1; lead <= horizon_; ++lead) {
      FieldSet x = out_template;
      x.valid_time = add_days(current.valid_time, lead);
      for (std::size_t t = 0; t < target_names.size(); ++t) {
        auto dst = x.channel(t);
        const auto& f = mean[static_cast<std::size_t>(lead - 1)][t];
        const auto& valid = x.channels[t].valid;
        for (std::size_t k = 0; k < cells; ++k)
          dst[k] = (valid && !(*valid)[k]) ? std::numeric_limits<double>::quiet_NaN() : f[k] + spread_ * rng.normal();
      }
      traj.push_back(std::move(x));
    }
  }
  return out;
}

PimReport pim(const ForecastRunner& runner, const FieldSet& previous, const FieldSet& current,
              std::span<const FieldSet> truth, const std::vector<PredictorGroup>& groups,
              const PimOptions& options) {
  require_compatible(previous, current, "initial states");
  validate_groups(groups, current.channel_count());
  if (options.members < 1) throw ValidationError("PIM needs at least one member");
  if (truth.empty()) throw ValidationError("PIM needs a verifying truth series");

  const std::uint64_t run_seed = derive_seed(options.seed, stream_id("pim/members"));
  const auto baseline = runner.run(previous, current, options.members, run_seed);
  std::vector<std::string> targets = options.targets;
  if (targets.empty())
    for (const auto& c : baseline.front().front().channels) targets.push_back(c.name);

  PimReport report;
  report.mode = options.mode;
  for (const auto& member : baseline) report.baseline_member_rmse.push_back(member_rmse(member, truth, targets));
  const double base_mean = mean(report.baseline_member_rmse);

  for (const auto& g : groups) {
    Rng rng(derive_seed(options.seed, stream_id("pim/shuffle/" + g.name)));
    const auto [prev_s, cur_s] = shuffle_initial_states(previous, current, g, rng, options.mode);
    const auto shuffled = runner.run(prev_s, cur_s, options.members, run_seed);
    PimEntry e;
    e.group = g.name;
    e.baseline_rmse = base_mean;
    for (std::size_t m = 0; m < shuffled.size(); ++m)
      e.per_member.push_back(member_rmse(shuffled[m], truth, targets) - report.baseline_member_rmse[m]);
    e.mean_increase = mean(e.per_member);
    e.std_increase = sample_stddev(e.per_member);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace s2sk
