#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s2sk/grid.hpp"

namespace s2sk {

// Empirical-CDF CRPS of one ensemble against a scalar observation,
// (1/M) sum |x_i - y| - (1/(2 M^2)) sum_ij |x_i - x_j|, evaluated on the
// sorted ensemble in O(M log M). With `fair` the pairwise term uses
// 1/(2 M (M - 1)) instead (requires M >= 2).
double crps(std::span<const double> ensemble, double obs, bool fair = false);

// Flat-array kernels. `ens` is [points x members] row-major, `weights` has
// one non-negative entry per point and is normalised internally.

// sqrt(weighted mean of the unbiased ensemble variance, times (M + 1) / M
// when `inflate`) over the weighted RMSE of the ensemble mean.
double ssr(std::span<const double> ens, std::size_t members, std::span<const double> truth,
           std::span<const double> weights, bool inflate = true);
double wrmse(std::span<const double> forecast, std::span<const double> truth, std::span<const double> weights);
// Weighted centred spatial correlation of one anomaly field pair.
double acc(std::span<const double> forecast_anomaly, std::span<const double> truth_anomaly,
           std::span<const double> weights);

// Field-level metrics for one channel. Ensemble series are indexed
// [time][member]; masked cells are skipped and weights renormalised over
// the valid cells.
using EnsembleSeries = std::vector<std::vector<FieldSet>>;

double field_crps(std::span<const FieldSet> members, const FieldSet& truth, std::size_t channel,
                  bool fair = false);
double field_ssr(const EnsembleSeries& forecast, std::span<const FieldSet> truth, std::size_t channel,
                 bool inflate = true);
double field_wrmse(std::span<const FieldSet> forecast, std::span<const FieldSet> truth, std::size_t channel);
// Ensemble-mean field of one time step.
FieldSet ensemble_mean(std::span<const FieldSet> members);
// Time-averaged ACC of anomalies w.r.t. `clim` (the model's own climatology
// for the forecast, the reference climatology for the truth).
double field_acc(std::span<const FieldSet> forecast, std::span<const FieldSet> truth,
                 const Climatology& forecast_clim, const Climatology& truth_clim, std::size_t channel);

// Per-point, per-calendar-day thresholds at percentile p from a pool of
// climatological samples within +-halfwidth days of each requested slot.
struct ThresholdField {
  GridSpec grid;
  std::vector<Channel> channels;
  double percentile = 95.0;
  int halfwidth = 15;
  std::vector<int> slots;               // calendar slots computed
  Tensor values;                        // [slots, channel, n_lat, n_lon]; NaN at masked cells
  std::vector<std::size_t> pool_sizes;  // samples pooled per slot
  std::size_t low_confidence_slots = 0; // slots with fewer than 20 samples

  std::span<const double> at(int slot, std::size_t channel) const;
};

inline constexpr std::size_t kMinThresholdSamples = 20;

ThresholdField percentile_thresholds(std::span<const FieldSet> samples, double p, int halfwidth = 15,
                                     std::vector<int> slots = {});

// Climatological exceedance probability of the p-th percentile, (100 - p) / 100.
double base_rate(double p);

struct BssResult {
  double bss = 0.0;
  std::size_t used_points = 0;
  std::size_t excluded_points = 0;  // points with BS_ref = 0
};

// Probability forecasts [times x points] against 0/1 outcomes. Per point
// BSS = 1 - BS / BS_ref with BS_ref from the constant `base`; the result
// is the weighted mean over points with BS_ref > 0.
BssResult bss_from_probabilities(std::span<const double> prob, std::span<const double> occurred,
                                 std::size_t points, double base, std::span<const double> weights);
// Ensemble version: prob = fraction of members above the threshold,
// occurred = truth above the threshold. `ens` is [times x points x members].
BssResult bss(std::span<const double> ens, std::size_t members, std::span<const double> truth,
              std::span<const double> thresholds, std::size_t points, double base,
              std::span<const double> weights);
// Field-level BSS for one channel across a forecast series.
BssResult field_bss(const EnsembleSeries& forecast, std::span<const FieldSet> truth,
                    const ThresholdField& thresholds, std::size_t channel);

// Metric values keyed by (variable, lead day).
using MetricTable = std::map<std::pair<std::string, int>, double>;

struct ScoreCell {
  enum class State { value, missing, undefined };
  State state = State::missing;
  double percent = 0.0;  // relative improvement in percent; positive = model better

  std::string render() const;  // "+12.0", "-3.5", "0.0", "missing", "undefined"
};

struct Scorecard {
  std::vector<std::string> variables;
  std::vector<int> leads;
  std::vector<std::vector<ScoreCell>> cells;  // [variable][lead]
};

// Relative improvement of `model` over `baseline`:
// (baseline - model) / baseline for loss-like metrics and
// (model - baseline) / |baseline| otherwise. Cells absent from the model
// table are missing; a zero baseline is undefined.
Scorecard scorecard(const MetricTable& model, const MetricTable& baseline, bool loss_like = true);

}  // namespace s2sk
