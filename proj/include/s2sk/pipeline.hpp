#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2sk/rollout.hpp"

namespace s2sk {

// Everything needed to run the reference latent pipeline on one grid and
// channel inventory.
struct PipelineConfig {
  std::size_t codebook_size = 512;
  std::size_t latent_a = 16;
  std::size_t latent_b = 8;
  int diffusion_steps = 1000;
  ScheduleKind schedule = ScheduleKind::linear;
  ReferenceDenoiserConfig denoiser;  // channel counts are overwritten from latent_a / latent_b
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static PipelineConfig from_json(const nlohmann::json& j);
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, const GridSpec& grid, const std::vector<Channel>& channels);
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  RolloutComponents components() const;
  const ReferenceDenoiser& denoiser() const { return *denoiser_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const ReferenceCoder& coder_a() const { return *coder_a_; }
  const ReferenceCoder& coder_b() const { return *coder_b_; }
  const Codebook& book_a() const { return book_a_; }
  const Codebook& book_b() const { return book_b_; }
  const PipelineConfig& config() const { return config_; }

  // Replaces the denoiser anchor with the embedded version of `state`.
  void set_anchor(const FieldSet& state);

 private:
  PipelineConfig config_;
  NoiseSchedule schedule_;
  std::unique_ptr<ReferenceCoder> coder_a_;
  std::unique_ptr<ReferenceCoder> coder_b_;
  Codebook book_a_;
  Codebook book_b_;
  std::unique_ptr<ReferenceDenoiser> denoiser_;
};

struct AblationConfig {
  PipelineConfig pipeline;
  RolloutConfig rollout{28, 11, 15, 0};
  std::vector<std::string> channels{"T2M", "MSLP"};
  int first_day = 22;  // week 4
  int last_day = 28;
};

struct AblationRow {
  std::string variant;  // optimal_transport, cross_attention, none
  std::string channel;
  double crps = 0.0;    // mean over the scored lead days
};

// Runs the reference pipeline three times from the same initial states and
// seeds, changing only the coupling operator, and scores each ensemble by
// CRPS over lead days [first_day, last_day]. truth[l] verifies lead l + 1.
std::vector<AblationRow> coupling_ablation(const FieldSet& previous, const FieldSet& current,
                                           std::span<const FieldSet> truth, const AblationConfig& config);

}  // namespace s2sk
