#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2sk/coupling.hpp"
#include "s2sk/diffusion.hpp"
#include "s2sk/grid.hpp"
#include "s2sk/vq.hpp"

namespace s2sk {

struct RolloutConfig {
  int horizon_days = 45;
  int n_members = 51;
  int n_infer = 15;
  std::uint64_t master_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

// Seed of ensemble member `member_id`:
// derive_seed(derive_seed(master, stream_id("rollout/member")), member_id).
std::uint64_t member_seed(std::uint64_t master_seed, int member_id);

// Fingerprints of the tensors seen at one rollout step.
struct StepRecord {
  int step = 0;  // 1-based lead
  std::uint64_t cond_current = 0;
  std::uint64_t cond_previous = 0;
  std::uint64_t output = 0;
};

struct MemberTrajectory {
  int member_id = 0;
  std::uint64_t seed = 0;
  std::vector<Tensor> latents;  // one stacked latent per lead
  std::vector<StepRecord> trace;
};

// Autoregressive latent rollout of one member. Step k samples a latent
// conditioned on (current, previous) = the two latest states, then slides
// the window. Throws NumericalError naming the step on non-finite output.
MemberTrajectory rollout_member(const Tensor& init_previous, const Tensor& init_current,
                                const RolloutConfig& config, std::uint64_t seed, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, int member_id = 0);

struct WindowCheck {
  bool ok = true;
  int failed_step = 0;
  std::string detail;
};

// Checks that step k was conditioned on outputs k-1 and k-2 (initial
// states for k <= 2) and that each recorded output matches the stored
// latent.
WindowCheck verify_sliding_window(const MemberTrajectory& trajectory, const Tensor& init_previous,
                                  const Tensor& init_current);

// Persistence-plus-coupling Gaussian denoiser used when no trained model is
// available. For conditioning (current, previous) the clean latent is
// modelled per element as N(mu, spread^2) with
//   mu = anchor + persistence * (current - anchor) + coupling delta,
// and each reverse step samples the exact Gaussian transition for that law.
// The coupling delta is the residual update of an OTB applied to
// pool x pool averaged tokens of the conditioning states, broadcast back
// to the latent sites. Plans are computed once per bind().
struct ReferenceDenoiserConfig {
  std::size_t channels_a = 16;
  std::size_t channels_b = 8;
  double persistence_a = 0.9;
  double persistence_b = 0.97;
  double spread_a = 0.3;
  double spread_b = 0.1;
  std::size_t pool = 6;
  std::size_t feature_dim = 8;
  double coupling_gain = 0.05;
  CouplingKind coupling = CouplingKind::optimal_transport;
  SinkhornOptions sinkhorn;
  std::uint64_t seed = 0;
  Tensor anchor;  // stacked latent [C_A + C_B, 30, 60]; empty means zero

  void validate() const;
  nlohmann::json to_json() const;
};

class ReferenceDenoiser final : public Denoiser {
 public:
  ReferenceDenoiser(ReferenceDenoiserConfig config, const NoiseSchedule& schedule);
  std::unique_ptr<Stepper> bind(const Conditioning& cond) const override;

  // Mean of the clean-latent law and the coupling output it was built from.
  struct Plan {
    Tensor mean;
    OtbOutput otb;
  };
  Plan plan(const Conditioning& cond) const;

  const ReferenceDenoiserConfig& config() const { return config_; }
  const OtbParams& otb_params() const { return otb_; }
  // Grid of the pooled coupling tokens, for WMID on archived plans.
  GridSpec token_grid() const;

 private:
  ReferenceDenoiserConfig config_;
  const NoiseSchedule& schedule_;
  OtbParams otb_;
};

// Block-averages [C, R, W] over pool x pool windows into [C, (R/p)*(W/p)].
Matrix pool_latent(const Tensor& latent, std::size_t first_channel, std::size_t channels, std::size_t pool);
GridSpec pooled_grid(const GridSpec& grid, std::size_t pool);

struct RolloutComponents {
  const Denoiser& denoiser;
  const NoiseSchedule& schedule;
  const Coder& coder_a;
  const Coder& coder_b;
  const Codebook& book_a;
  const Codebook& book_b;
};

struct MemberFailure {
  int member_id = 0;
  std::string category;
  std::string message;
};

// Receives each successfully decoded member. Calls are serialised but
// arrive in completion order, not member order.
class MemberSink {
 public:
  virtual ~MemberSink() = default;
  // `decoded` is empty when wants_decoded() is false and members are not kept.
  virtual void accept(const MemberTrajectory& latent, std::vector<FieldSet>&& decoded) = 0;
  virtual bool wants_decoded() const { return true; }
};

struct EnsembleOptions {
  bool keep_members = true;   // retain decoded members in the result
  bool keep_latents = false;  // retain latent trajectories in the result
  MemberSink* sink = nullptr;
};

struct EnsembleForecast {
  Date init_date{};
  GridSpec grid;
  std::vector<Channel> channels;
  std::vector<std::uint64_t> seeds;               // indexed by member id
  std::vector<std::vector<FieldSet>> members;     // [member][lead] when kept; empty for failures
  std::vector<MemberTrajectory> latents;          // when kept
  std::vector<MemberFailure> failures;            // sorted by member id
  nlohmann::json config;

  bool failed(int member_id) const;
};

// Embeds both initial states once, rolls out every member in latent space
// (members run in parallel), and decodes each member once at the end.
// Member failures are recorded rather than propagated.
EnsembleForecast rollout_ensemble(const FieldSet& init_previous, const FieldSet& init_current,
                                  const RolloutConfig& config, const RolloutComponents& components,
                                  const EnsembleOptions& options = {});

}  // namespace s2sk
