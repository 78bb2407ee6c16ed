#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "s2sk/grid.hpp"
#include "s2sk/rng.hpp"
#include "s2sk/rollout.hpp"
#include "s2sk/synth.hpp"

namespace s2sk {

struct PredictorGroup {
  std::string name;
  std::vector<std::size_t> channels;
};

// Q, T, U, V, Z (upper-air families: name prefix followed by one of
// kPressureLevels, so U10/V10 stay surface), Sfc (remaining atmospheric
// channels), Ocean, Land, Flux.
std::vector<PredictorGroup> default_groups(const std::vector<Channel>& channels);

// Rejects out-of-range indices, duplicate names and overlapping groups.
void validate_groups(const std::vector<PredictorGroup>& groups, std::size_t channel_count);
const PredictorGroup& find_group(const std::vector<PredictorGroup>& groups, std::string_view name);

enum class ShuffleMode {
  spatial,  // one permutation of the valid cells per channel
  joint,    // one permutation across all (channel, valid cell) entries of the group
};

std::string_view to_string(ShuffleMode m);
ShuffleMode parse_shuffle_mode(std::string_view s);

// Permutes the group's values; all other channels are copied bitwise.
// Masked cells stay in place.
FieldSet shuffle_group(const FieldSet& x, const PredictorGroup& group, Rng& rng,
                       ShuffleMode mode = ShuffleMode::spatial);

// Shuffles both initial states with the same permutations.
std::pair<FieldSet, FieldSet> shuffle_initial_states(const FieldSet& previous, const FieldSet& current,
                                                     const PredictorGroup& group, Rng& rng,
                                                     ShuffleMode mode = ShuffleMode::spatial);

// Produces [member][lead] forecasts from two initial states. Member m must
// depend only on the inputs and member_seed(master_seed, m).
class ForecastRunner {
 public:
  virtual ~ForecastRunner() = default;
  virtual std::vector<std::vector<FieldSet>> run(const FieldSet& previous, const FieldSet& current,
                                                 int members, std::uint64_t master_seed) const = 0;
};

// Full latent pipeline: embed, roll out, decode. Member failures throw.
class RolloutRunner final : public ForecastRunner {
 public:
  RolloutRunner(RolloutConfig config, const RolloutComponents& components)
      : config_(std::move(config)), components_(components) {}
  std::vector<std::vector<FieldSet>> run(const FieldSet& previous, const FieldSet& current, int members,
                                         std::uint64_t master_seed) const override;

 private:
  RolloutConfig config_;
  RolloutComponents components_;
};

// Forecasts the coupled targets of a synthetic configuration from the
// known generating equations. For a link driver -> target with lag L and
// gain g, the forecast of the target at lead l is
//   det(t + l) + rho_T^l (a_T - g rho_D^L a_D) + g rho_D^|l - L| a_D
// where a_T, a_D are current anomalies against the deterministic part and
// rho are the sphere AR(1) coefficients; members add Gaussian noise of the
// target's stationary spread. Outputs contain only the target channels, and
// only the targets and their drivers are read.
class SyntheticResponseRunner final : public ForecastRunner {
 public:
  SyntheticResponseRunner(SynthConfig config, int horizon_days, double member_spread = 0.5);
  std::vector<std::vector<FieldSet>> run(const FieldSet& previous, const FieldSet& current, int members,
                                         std::uint64_t master_seed) const override;
  std::vector<std::string> targets() const;

 private:
  SynthConfig config_;
  int horizon_;
  double spread_;
  SyntheticGenerator model_;  // used only for the deterministic part
};

struct PimOptions {
  int members = 51;
  std::uint64_t seed = 0;  // member seeds and shuffle permutations derive from it
  ShuffleMode mode = ShuffleMode::spatial;
  std::vector<std::string> targets;  // channels scored; empty means every forecast channel
};

struct PimEntry {
  std::string group;
  double mean_increase = 0.0;  // mean over members of shuffled - baseline wRMSE
  double std_increase = 0.0;   // sample standard deviation over members
  double baseline_rmse = 0.0;  // mean over members of the baseline wRMSE
  std::vector<double> per_member;
};

struct PimReport {
  std::vector<PimEntry> entries;
  std::vector<double> baseline_member_rmse;
  ShuffleMode mode = ShuffleMode::spatial;
};

// Member wRMSE pools every lead and target channel; truth[l] is the
// verifying state for lead l + 1.
PimReport pim(const ForecastRunner& runner, const FieldSet& previous, const FieldSet& current,
              std::span<const FieldSet> truth, const std::vector<PredictorGroup>& groups,
              const PimOptions& options);

}  // namespace s2sk
