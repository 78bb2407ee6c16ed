#include "s2sk/pipeline.hpp"

#include "s2sk/error.hpp"
#include "s2sk/verify.hpp"

namespace s2sk {

nlohmann::json PipelineConfig::to_json() const {
  return {{"codebook_size", codebook_size},
          {"latent_a", latent_a},
          {"latent_b", latent_b},
          {"diffusion_steps", diffusion_steps},
          {"schedule", to_string(schedule)},
          {"denoiser", denoiser.to_json()},
          {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.latent_a = j.value("latent_a", c.latent_a);
    c.latent_b = j.value("latent_b", c.latent_b);
    c.diffusion_steps = j.value("diffusion_steps", c.diffusion_steps);
    c.schedule = parse_schedule_kind(j.value("schedule", std::string(to_string(c.schedule))));
    c.seed = j.value("seed", c.seed);
    if (j.contains("denoiser")) {
      const auto& d = j.at("denoiser");
      auto& r = c.denoiser;
      r.persistence_a = d.value("persistence_a", r.persistence_a);
      r.persistence_b = d.value("persistence_b", r.persistence_b);
      r.spread_a = d.value("spread_a", r.spread_a);
      r.spread_b = d.value("spread_b", r.spread_b);
      r.pool = d.value("pool", r.pool);
      r.feature_dim = d.value("feature_dim", r.feature_dim);
      r.coupling_gain = d.value("coupling_gain", r.coupling_gain);
      r.coupling = parse_coupling_kind(d.value("coupling", std::string(to_string(r.coupling))));
      if (d.contains("sinkhorn")) {
        r.sinkhorn.epsilon = d.at("sinkhorn").value("epsilon", r.sinkhorn.epsilon);
        r.sinkhorn.max_iter = d.at("sinkhorn").value("max_iter", r.sinkhorn.max_iter);
        r.sinkhorn.tol = d.at("sinkhorn").value("tol", r.sinkhorn.tol);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

Pipeline::Pipeline(PipelineConfig config, const GridSpec& grid, const std::vector<Channel>& channels)
    : config_(std::move(config)) {
  if (config_.codebook_size == 0 || config_.latent_a == 0 || config_.latent_b == 0)
    throw ValidationError("pipeline needs a non-empty codebook and latent blocks");
  const std::size_t ca = block_channels(channels, false).size();
  const std::size_t cb = block_channels(channels, true).size();
  if (ca == 0 || cb == 0) throw ValidationError("pipeline needs atmospheric and boundary channels");
  schedule_ = make_schedule(config_.diffusion_steps, config_.schedule);
  const std::uint64_t s = config_.seed;
  coder_a_ = std::make_unique<ReferenceCoder>(grid, ca, config_.latent_a, derive_seed(s, stream_id("coder/a")));
  coder_b_ = std::make_unique<ReferenceCoder>(grid, cb, config_.latent_b, derive_seed(s, stream_id("coder/b")));
  book_a_ = Codebook::random(config_.codebook_size, config_.latent_a, derive_seed(s, stream_id("codebook/a")),
                             BookSphere::atmosphere);
  book_b_ = Codebook::random(config_.codebook_size, config_.latent_b, derive_seed(s, stream_id("codebook/b")),
                             BookSphere::boundary);
  config_.denoiser.channels_a = config_.latent_a;
  config_.denoiser.channels_b = config_.latent_b;
  config_.denoiser.seed = derive_seed(s, stream_id("denoiser"));
  denoiser_ = std::make_unique<ReferenceDenoiser>(config_.denoiser, schedule_);
}

RolloutComponents Pipeline::components() const {
  return {*denoiser_, schedule_, *coder_a_, *coder_b_, book_a_, book_b_};
}

void Pipeline::set_anchor(const FieldSet& state) {
  config_.denoiser.anchor = embed(state, *coder_a_, *coder_b_, book_a_, book_b_).stacked();
  denoiser_ = std::make_unique<ReferenceDenoiser>(config_.denoiser, schedule_);
}

std::vector<AblationRow> coupling_ablation(const FieldSet& previous, const FieldSet& current,
                                           std::span<const FieldSet> truth, const AblationConfig& config) {
  if (config.first_day < 1 || config.last_day < config.first_day)
    throw ValidationError("ablation lead window is empty");
  if (config.rollout.horizon_days < config.last_day)
    throw ValidationError("ablation horizon is shorter than the scored window");
  if (truth.size() < static_cast<std::size_t>(config.last_day))
    throw ValidationError("ablation truth series ends before the scored window");
  std::vector<std::size_t> channel_idx;
  for (const auto& n : config.channels) channel_idx.push_back(current.channel_index(n));

  std::vector<AblationRow> rows;
  for (CouplingKind kind : {CouplingKind::optimal_transport, CouplingKind::cross_attention, CouplingKind::none}) {
    PipelineConfig pc = config.pipeline;
    pc.denoiser.coupling = kind;
    Pipeline pipeline(pc, current.grid, current.channels);
    EnsembleForecast f = rollout_ensemble(previous, current, config.rollout, pipeline.components());
    if (!f.failures.empty())
      throw NumericalError("ablation variant " + std::string(to_string(kind)) + ": member " +
                           std::to_string(f.failures.front().member_id) + " failed: " + f.failures.front().message);
    for (std::size_t c = 0; c < channel_idx.size(); ++c) {
      double total = 0.0;
      for (int d = config.first_day; d <= config.last_day; ++d) {
        std::vector<FieldSet> members;
        for (const auto& m : f.members) members.push_back(m[static_cast<std::size_t>(d - 1)]);
        total += field_crps(members, truth[static_cast<std::size_t>(d - 1)], channel_idx[c]);
      }
      rows.push_back({std::string(to_string(kind)), config.channels[c],
                      total / static_cast<double>(config.last_day - config.first_day + 1)});
    }
  }
  return rows;
}

}  // namespace s2sk
