#include "s2sk/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "s2sk/error.hpp"
#include "s2sk/stats.hpp"

namespace s2sk {

namespace {

double weight_sum(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ValidationError("weights must be non-negative");
    s += v;
  }
  if (!(s > 0.0)) throw ValidationError("weights sum to zero");
  return s;
}

// Indices of valid cells of a channel and their weights (sum 1).
struct ValidCells {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

ValidCells valid_cells(const FieldSet& x, std::size_t channel) {
  if (channel >= x.channel_count()) throw ValidationError("channel index out of range");
  const auto& ch = x.channels[channel];
  const auto w = cell_weights(x.grid, ch.valid.get());
  ValidCells out;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (ch.valid && !(*ch.valid)[k]) continue;
    out.index.push_back(k);
    out.weight.push_back(w[k]);
  }
  return out;
}

int circular_distance(int a, int b) {
  const int d = std::abs(a - b) % kCalendarSlots;
  return std::min(d, kCalendarSlots - d);
}

}  // namespace

double crps(std::span<const double> ensemble, double obs, bool fair) {
  const std::size_t m = ensemble.size();
  if (m == 0) throw ValidationError("CRPS of an empty ensemble");
  if (fair && m < 2) throw ValidationError("fair CRPS needs at least two members");
  if (!std::isfinite(obs)) throw ValidationError("CRPS observation is not finite");
  std::vector<double> x(ensemble.begin(), ensemble.end());
  double abs_err = 0.0;
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("CRPS ensemble member is not finite");
    abs_err += std::abs(v - obs);
  }
  std::sort(x.begin(), x.end());
  // sum_ij |x_i - x_j| = 2 sum_i (2i - M - 1) x_(i) for 1-based ranks i.
  double spread = 0.0;
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) spread += (2.0 * static_cast<double>(i + 1) - md - 1.0) * x[i];
  const double pair_norm = fair ? md * (md - 1.0) : md * md;
  return abs_err / md - spread / pair_norm;
}

double ssr(std::span<const double> ens, std::size_t members, std::span<const double> truth,
           std::span<const double> weights, bool inflate) {
  if (members < 2) throw ValidationError("SSR needs at least two members");
  const std::size_t points = truth.size();
  if (ens.size() != points * members || weights.size() != points)
    throw ValidationError("SSR: ensemble, truth and weight sizes disagree");
  const double wsum = weight_sum(weights);
  const double md = static_cast<double>(members);
  double var_acc = 0.0, err_acc = 0.0;
  for (std::size_t p = 0; p < points; ++p) {
    if (weights[p] == 0.0) continue;
    const double* e = ens.data() + p * members;
    double mean = 0.0;
    for (std::size_t i = 0; i < members; ++i) mean += e[i];
    mean /= md;
    double ss = 0.0;
    for (std::size_t i = 0; i < members; ++i) ss += (e[i] - mean) * (e[i] - mean);
    var_acc += weights[p] * ss / (md - 1.0);
    err_acc += weights[p] * (mean - truth[p]) * (mean - truth[p]);
  }
  if (!(err_acc > 0.0)) throw ValidationError("SSR undefined: ensemble-mean RMSE is zero");
  const double spread = std::sqrt((inflate ? (md + 1.0) / md : 1.0) * var_acc / wsum);
  return spread / std::sqrt(err_acc / wsum);
}

double wrmse(std::span<const double> forecast, std::span<const double> truth, std::span<const double> weights) {
  if (forecast.size() != truth.size() || weights.size() != truth.size())
    throw ValidationError("wRMSE: sizes disagree");
  const double wsum = weight_sum(weights);
  double acc_sq = 0.0;
  for (std::size_t p = 0; p < truth.size(); ++p)
    if (weights[p] != 0.0) acc_sq += weights[p] * (forecast[p] - truth[p]) * (forecast[p] - truth[p]);
  return std::sqrt(acc_sq / wsum);
}

double acc(std::span<const double> fa, std::span<const double> ta, std::span<const double> weights) {
  if (fa.size() != ta.size() || weights.size() != ta.size()) throw ValidationError("ACC: sizes disagree");
  const double wsum = weight_sum(weights);
  double mf = 0.0, mt = 0.0;
  for (std::size_t p = 0; p < ta.size(); ++p) {
    if (weights[p] == 0.0) continue;
    mf += weights[p] * fa[p];
    mt += weights[p] * ta[p];
  }
  mf /= wsum;
  mt /= wsum;
  double cov = 0.0, vf = 0.0, vt = 0.0;
  for (std::size_t p = 0; p < ta.size(); ++p) {
    if (weights[p] == 0.0) continue;
    const double df = fa[p] - mf, dt = ta[p] - mt;
    cov += weights[p] * df * dt;
    vf += weights[p] * df * df;
    vt += weights[p] * dt * dt;
  }
  if (!(vf > 0.0) || !(vt > 0.0)) throw ValidationError("ACC undefined: zero-variance anomaly field");
  return std::clamp(cov / std::sqrt(vf * vt), -1.0, 1.0);
}

double field_crps(std::span<const FieldSet> members, const FieldSet& truth, std::size_t channel, bool fair) {
  if (members.empty()) throw ValidationError("CRPS of an empty ensemble");
  for (const auto& m : members) require_compatible(m, truth, "CRPS forecast vs truth");
  const ValidCells vc = valid_cells(truth, channel);
  std::vector<double> ens(members.size());
  double total = 0.0, wsum = 0.0;
  for (std::size_t n = 0; n < vc.index.size(); ++n) {
    const std::size_t k = vc.index[n];
    for (std::size_t i = 0; i < members.size(); ++i) ens[i] = members[i].channel(channel)[k];
    total += vc.weight[n] * crps(ens, truth.channel(channel)[k], fair);
    wsum += vc.weight[n];
  }
  return total / wsum;
}

double field_ssr(const EnsembleSeries& forecast, std::span<const FieldSet> truth, std::size_t channel,
                 bool inflate) {
  if (forecast.size() != truth.size() || truth.empty())
    throw ValidationError("SSR: forecast and truth series lengths differ or are empty");
  const std::size_t members = forecast.front().size();
  const ValidCells vc = valid_cells(truth.front(), channel);
  std::vector<double> ens, obs, w;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (forecast[t].size() != members) throw ValidationError("SSR: member count varies over time");
    for (const auto& m : forecast[t]) require_compatible(m, truth[t], "SSR forecast vs truth");
    for (std::size_t n = 0; n < vc.index.size(); ++n) {
      const std::size_t k = vc.index[n];
      for (const auto& m : forecast[t]) ens.push_back(m.channel(channel)[k]);
      obs.push_back(truth[t].channel(channel)[k]);
      w.push_back(vc.weight[n]);
    }
  }
  return ssr(ens, members, obs, w, inflate);
}

double field_wrmse(std::span<const FieldSet> forecast, std::span<const FieldSet> truth, std::size_t channel) {
  if (forecast.size() != truth.size() || truth.empty())
    throw ValidationError("wRMSE: forecast and truth series lengths differ or are empty");
  const ValidCells vc = valid_cells(truth.front(), channel);
  std::vector<double> f, o, w;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    require_compatible(forecast[t], truth[t], "wRMSE forecast vs truth");
    for (std::size_t n = 0; n < vc.index.size(); ++n) {
      f.push_back(forecast[t].channel(channel)[vc.index[n]]);
      o.push_back(truth[t].channel(channel)[vc.index[n]]);
      w.push_back(vc.weight[n]);
    }
  }
  return wrmse(f, o, w);
}

FieldSet ensemble_mean(std::span<const FieldSet> members) {
  if (members.empty()) throw ValidationError("ensemble mean of zero members");
  FieldSet out = zeros_like(members.front());
  for (const auto& m : members) {
    require_compatible(m, out, "ensemble members");
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= inv;
  return out;
}

double field_acc(std::span<const FieldSet> forecast, std::span<const FieldSet> truth,
                 const Climatology& forecast_clim, const Climatology& truth_clim, std::size_t channel) {
  if (forecast.size() != truth.size() || truth.empty())
    throw ValidationError("ACC: forecast and truth series lengths differ or are empty");
  const ValidCells vc = valid_cells(truth.front(), channel);
  std::vector<double> fa(vc.index.size()), ta(vc.index.size());
  double total = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    require_compatible(forecast[t], truth[t], "ACC forecast vs truth");
    const int slot_f = calendar_slot(forecast[t].valid_time);
    const int slot_t = calendar_slot(truth[t].valid_time);
    const auto cf = forecast_clim.day(slot_f, channel);
    const auto ct = truth_clim.day(slot_t, channel);
    for (std::size_t n = 0; n < vc.index.size(); ++n) {
      const std::size_t k = vc.index[n];
      fa[n] = forecast[t].channel(channel)[k] - cf[k];
      ta[n] = truth[t].channel(channel)[k] - ct[k];
    }
    total += acc(fa, ta, vc.weight);
  }
  return total / static_cast<double>(truth.size());
}

std::span<const double> ThresholdField::at(int slot, std::size_t channel) const {
  const auto it = std::find(slots.begin(), slots.end(), slot);
  if (it == slots.end()) throw ValidationError("no thresholds computed for calendar slot " + std::to_string(slot));
  if (channel >= channels.size()) throw ValidationError("threshold channel out of range");
  const auto s = static_cast<std::size_t>(it - slots.begin());
  return values.values().subspan((s * channels.size() + channel) * grid.cells(), grid.cells());
}

ThresholdField percentile_thresholds(std::span<const FieldSet> samples, double p, int halfwidth,
                                     std::vector<int> slots) {
  if (samples.empty()) throw ValidationError("thresholds need at least one climatological sample");
  if (!(p > 0.0 && p < 100.0)) throw ValidationError("threshold percentile must lie in (0, 100)");
  if (halfwidth < 0 || halfwidth > kCalendarSlots / 2) throw ValidationError("window halfwidth out of range");
  for (const auto& s : samples) require_compatible(s, samples.front(), "climatology samples");
  if (slots.empty())
    for (int s = 0; s < kCalendarSlots; ++s) slots.push_back(s);
  for (int s : slots)
    if (s < 0 || s >= kCalendarSlots) throw ValidationError("calendar slot out of range");

  ThresholdField out;
  out.grid = samples.front().grid;
  out.channels = samples.front().channels;
  out.percentile = p;
  out.halfwidth = halfwidth;
  out.slots = slots;
  const std::size_t nc = out.channels.size(), cells = out.grid.cells();
  out.values = Tensor({slots.size(), nc, out.grid.n_lat, out.grid.n_lon});

  std::vector<int> sample_slot(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) sample_slot[i] = calendar_slot(samples[i].valid_time);

  std::vector<double> pool;
  for (std::size_t si = 0; si < slots.size(); ++si) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (circular_distance(sample_slot[i], slots[si]) <= halfwidth) members.push_back(i);
    out.pool_sizes.push_back(members.size());
    if (members.size() < kMinThresholdSamples) ++out.low_confidence_slots;
    for (std::size_t c = 0; c < nc; ++c) {
      const auto& valid = out.channels[c].valid;
      double* dst = out.values.data() + (si * nc + c) * cells;
      for (std::size_t k = 0; k < cells; ++k) {
        if (members.empty() || (valid && !(*valid)[k])) {
          dst[k] = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        pool.clear();
        for (std::size_t i : members) pool.push_back(samples[i].channel(c)[k]);
        dst[k] = empirical_quantile(pool, p);
      }
    }
  }
  return out;
}

double base_rate(double p) {
  if (!(p > 0.0 && p < 100.0)) throw ValidationError("percentile must lie in (0, 100)");
  return (100.0 - p) / 100.0;
}

BssResult bss_from_probabilities(std::span<const double> prob, std::span<const double> occurred,
                                 std::size_t points, double base, std::span<const double> weights) {
  if (points == 0 || prob.size() != occurred.size() || prob.size() % points != 0 || weights.size() != points)
    throw ValidationError("BSS: probability, outcome and weight sizes disagree");
  const std::size_t times = prob.size() / points;
  if (times == 0) throw ValidationError("BSS needs at least one time");
  BssResult r;
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < points; ++p) {
    double bs = 0.0, bs_ref = 0.0;
    for (std::size_t t = 0; t < times; ++t) {
      const double o = occurred[t * points + p];
      const double f = prob[t * points + p];
      bs += (f - o) * (f - o);
      bs_ref += (base - o) * (base - o);
    }
    if (bs_ref == 0.0) {
      ++r.excluded_points;
      continue;
    }
    if (weights[p] == 0.0) continue;
    ++r.used_points;
    num += weights[p] * (1.0 - bs / bs_ref);
    den += weights[p];
  }
  if (r.used_points == 0 || !(den > 0.0))
    throw ValidationError("BSS undefined: the reference Brier score is zero at every point");
  r.bss = num / den;
  return r;
}

BssResult bss(std::span<const double> ens, std::size_t members, std::span<const double> truth,
              std::span<const double> thresholds, std::size_t points, double base,
              std::span<const double> weights) {
  if (members == 0) throw ValidationError("BSS needs at least one member");
  if (ens.size() != truth.size() * members || thresholds.size() != truth.size())
    throw ValidationError("BSS: ensemble, truth and threshold sizes disagree");
  std::vector<double> prob(truth.size()), occurred(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::size_t above = 0;
    for (std::size_t m = 0; m < members; ++m) above += ens[i * members + m] > thresholds[i] ? 1 : 0;
    prob[i] = static_cast<double>(above) / static_cast<double>(members);
    occurred[i] = truth[i] > thresholds[i] ? 1.0 : 0.0;
  }
  return bss_from_probabilities(prob, occurred, points, base, weights);
}

BssResult field_bss(const EnsembleSeries& forecast, std::span<const FieldSet> truth,
                    const ThresholdField& thresholds, std::size_t channel) {
  if (forecast.size() != truth.size() || truth.empty())
    throw ValidationError("BSS: forecast and truth series lengths differ or are empty");
  if (thresholds.grid != truth.front().grid || thresholds.channels.size() != truth.front().channel_count())
    throw ValidationError("BSS: thresholds do not match the truth grid/channels");
  const std::size_t members = forecast.front().size();
  const ValidCells vc = valid_cells(truth.front(), channel);
  std::vector<double> ens, obs, thr;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (forecast[t].size() != members) throw ValidationError("BSS: member count varies over time");
    const auto q = thresholds.at(calendar_slot(truth[t].valid_time), channel);
    for (const auto& m : forecast[t]) require_compatible(m, truth[t], "BSS forecast vs truth");
    for (std::size_t k : vc.index) {
      for (const auto& m : forecast[t]) ens.push_back(m.channel(channel)[k]);
      obs.push_back(truth[t].channel(channel)[k]);
      thr.push_back(q[k]);
    }
  }
  return bss(ens, members, obs, thr, vc.index.size(), base_rate(thresholds.percentile), vc.weight);
}

std::string ScoreCell::render() const {
  switch (state) {
    case State::missing: return "missing";
    case State::undefined: return "undefined";
    case State::value: break;
  }
  char buf[64];
  const double v = percent == 0.0 ? 0.0 : percent;
  std::snprintf(buf, sizeof buf, v > 0.0 ? "%+.1f" : "%.1f", v);
  std::string s(buf);
  if (s == "-0.0" || s == "+0.0") s = "0.0";
  return s;
}

Scorecard scorecard(const MetricTable& model, const MetricTable& baseline, bool loss_like) {
  Scorecard sc;
  std::set<std::string> vars;
  std::set<int> leads;
  for (const auto* table : {&model, &baseline})
    for (const auto& [key, value] : *table) {
      vars.insert(key.first);
      leads.insert(key.second);
    }
  sc.variables.assign(vars.begin(), vars.end());
  sc.leads.assign(leads.begin(), leads.end());
  for (const auto& v : sc.variables) {
    std::vector<ScoreCell> row;
    for (int lead : sc.leads) {
      ScoreCell cell;
      const auto m = model.find({v, lead});
      const auto b = baseline.find({v, lead});
      if (m == model.end() || b == baseline.end() || !std::isfinite(m->second)) {
        cell.state = ScoreCell::State::missing;
      } else if (b->second == 0.0 || !std::isfinite(b->second)) {
        cell.state = ScoreCell::State::undefined;
      } else {
        cell.state = ScoreCell::State::value;
        cell.percent = loss_like ? 100.0 * (b->second - m->second) / b->second
                                 : 100.0 * (m->second - b->second) / std::abs(b->second);
      }
      row.push_back(cell);
    }
    sc.cells.push_back(std::move(row));
  }
  return sc;
}

}  // namespace s2sk
