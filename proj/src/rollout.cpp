#include "s2sk/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "s2sk/error.hpp"
#include "s2sk/parallel.hpp"

namespace s2sk {

void RolloutConfig::validate() const {
  if (horizon_days < 1 || horizon_days > 180)
    throw ValidationError("horizon must lie in [1, 180] days; got " + std::to_string(horizon_days));
  if (n_members < 1) throw ValidationError("ensemble needs at least one member");
  if (n_infer < 1) throw ValidationError("n_infer must be >= 1");
}

nlohmann::json RolloutConfig::to_json() const {
  return {{"horizon_days", horizon_days},
          {"n_members", n_members},
          {"n_infer", n_infer},
          {"master_seed", master_seed}};
}

std::uint64_t member_seed(std::uint64_t master_seed, int member_id) {
  if (member_id < 0) throw ValidationError("member id must be non-negative");
  return derive_seed(derive_seed(master_seed, stream_id("rollout/member")),
                     static_cast<std::uint64_t>(member_id));
}

MemberTrajectory rollout_member(const Tensor& init_previous, const Tensor& init_current,
                                const RolloutConfig& config, std::uint64_t seed, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, int member_id) {
  config.validate();
  if (init_previous.shape() != init_current.shape())
    throw ValidationError("initial latents differ in shape");
  MemberTrajectory out;
  out.member_id = member_id;
  out.seed = seed;
  out.latents.reserve(static_cast<std::size_t>(config.horizon_days));
  Rng rng(seed);
  const Tensor* previous = &init_previous;
  const Tensor* current = &init_current;
  for (int k = 1; k <= config.horizon_days; ++k) {
    DiffusionSample s = sample(denoiser, schedule, Conditioning{*current, *previous}, rng, config.n_infer);
    if (!s.latent.all_finite())
      throw NumericalError("non-finite latent at rollout step " + std::to_string(k));
    out.trace.push_back({k, fingerprint(*current), fingerprint(*previous), fingerprint(s.latent)});
    out.latents.push_back(std::move(s.latent));
    previous = current;
    current = &out.latents.back();
    // The vector was reserved, so earlier elements do not move.
  }
  return out;
}

WindowCheck verify_sliding_window(const MemberTrajectory& t, const Tensor& init_previous,
                                  const Tensor& init_current) {
  auto fail = [](int step, std::string what) { return WindowCheck{false, step, std::move(what)}; };
  if (t.trace.size() != t.latents.size()) return fail(0, "trace and latent counts differ");
  const std::uint64_t fp_prev = fingerprint(init_previous), fp_cur = fingerprint(init_current);
  for (std::size_t i = 0; i < t.trace.size(); ++i) {
    const StepRecord& r = t.trace[i];
    const int k = static_cast<int>(i) + 1;
    if (r.step != k) return fail(k, "step index out of order");
    if (r.output != fingerprint(t.latents[i])) return fail(k, "output does not match stored latent");
    const std::uint64_t want_cur = k == 1 ? fp_cur : t.trace[i - 1].output;
    const std::uint64_t want_prev = k == 1 ? fp_prev : (k == 2 ? fp_cur : t.trace[i - 2].output);
    if (r.cond_current != want_cur) return fail(k, "current conditioning is not the latest state");
    if (r.cond_previous != want_prev) return fail(k, "previous conditioning is not the state before it");
  }
  return {};
}

void ReferenceDenoiserConfig::validate() const {
  if (channels_a == 0 || channels_b == 0) throw ValidationError("reference denoiser needs both latent blocks");
  for (double p : {persistence_a, persistence_b})
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("persistence must lie in [0, 1)");
  for (double s : {spread_a, spread_b})
    if (!(s > 0.0)) throw ValidationError("spread must be positive");
  if (pool == 0 || kLatentRows % pool != 0 || kLatentCols % pool != 0)
    throw ValidationError("pool must divide the 30 x 60 latent grid; got " + std::to_string(pool));
  if (feature_dim == 0) throw ValidationError("feature_dim must be >= 1");
  if (anchor.size() > 1 && anchor.shape() != Shape{channels_a + channels_b, kLatentRows, kLatentCols})
    throw ValidationError("anchor latent has shape " + shape_string(anchor.shape()));
}

nlohmann::json ReferenceDenoiserConfig::to_json() const {
  return {{"channels_a", channels_a},
          {"channels_b", channels_b},
          {"persistence_a", persistence_a},
          {"persistence_b", persistence_b},
          {"spread_a", spread_a},
          {"spread_b", spread_b},
          {"pool", pool},
          {"feature_dim", feature_dim},
          {"coupling_gain", coupling_gain},
          {"coupling", to_string(coupling)},
          {"sinkhorn", {{"epsilon", sinkhorn.epsilon}, {"max_iter", sinkhorn.max_iter}, {"tol", sinkhorn.tol}}},
          {"seed", seed},
          {"anchor", anchor.size() > 1 ? "embedded climatology" : "zero"}};
}

Matrix pool_latent(const Tensor& latent, std::size_t first, std::size_t channels, std::size_t pool) {
  if (latent.rank() != 3 || first + channels > latent.dim(0))
    throw ValidationError("pool: channel range outside latent " + shape_string(latent.shape()));
  const std::size_t rows = latent.dim(1), cols = latent.dim(2);
  if (pool == 0 || rows % pool != 0 || cols % pool != 0) throw ValidationError("pool must divide the grid");
  const std::size_t pr = rows / pool, pc = cols / pool;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(pr * pc));
  const double inv = 1.0 / static_cast<double>(pool * pool);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>((i / pool) * pc + j / pool)) +=
            inv * latent.at(first + c, i, j);
  return out;
}

GridSpec pooled_grid(const GridSpec& grid, std::size_t pool) {
  if (pool == 0 || grid.n_lat % pool != 0 || grid.n_lon % pool != 0)
    throw ValidationError("pool must divide the grid");
  GridSpec g;
  g.n_lat = grid.n_lat / pool;
  g.n_lon = grid.n_lon / pool;
  g.lat_step_deg = grid.lat_step_deg * static_cast<double>(pool);
  g.lon_step_deg = grid.lon_step_deg * static_cast<double>(pool);
  g.lat_start_deg = grid.lat_start_deg + grid.lat_step_deg * static_cast<double>(pool - 1) / 2.0;
  g.lon_start_deg = grid.lon_start_deg + grid.lon_step_deg * static_cast<double>(pool - 1) / 2.0;
  return g;
}

ReferenceDenoiser::ReferenceDenoiser(ReferenceDenoiserConfig config, const NoiseSchedule& schedule)
    : config_(std::move(config)), schedule_(schedule) {
  config_.validate();
  otb_ = OtbParams::reference(config_.channels_a, config_.channels_b, config_.feature_dim,
                              derive_seed(config_.seed, stream_id("reference/otb")), config_.coupling_gain);
  otb_.kind = config_.coupling;
  otb_.sinkhorn = config_.sinkhorn;
}

GridSpec ReferenceDenoiser::token_grid() const { return pooled_grid(GridSpec::latent(), config_.pool); }

ReferenceDenoiser::Plan ReferenceDenoiser::plan(const Conditioning& cond) const {
  const std::size_t ca = config_.channels_a, cb = config_.channels_b, c = ca + cb;
  const Shape shape{c, kLatentRows, kLatentCols};
  if (cond.current.shape() != shape || cond.previous.shape() != shape)
    throw ValidationError("reference denoiser expects latents of shape " + shape_string(shape) + ", got " +
                          shape_string(cond.current.shape()));
  const std::size_t p = config_.pool;
  const Matrix a_cur = pool_latent(cond.current, 0, ca, p);
  const Matrix a_prev = pool_latent(cond.previous, 0, ca, p);
  const Matrix b_cur = pool_latent(cond.current, ca, cb, p);
  const Matrix b_prev = pool_latent(cond.previous, ca, cb, p);

  Plan out;
  out.otb = otb_block(a_cur, b_cur, OtbConditioning{a_cur, a_prev, b_cur, b_prev}, otb_);
  const Matrix delta_a = out.otb.a_out - a_cur;
  const Matrix delta_b = out.otb.b_out - b_cur;

  const bool anchored = config_.anchor.size() > 1;
  out.mean = Tensor(shape);
  const std::size_t pc = kLatentCols / p;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const bool in_a = ch < ca;
    const double rho = in_a ? config_.persistence_a : config_.persistence_b;
    const Matrix& delta = in_a ? delta_a : delta_b;
    const auto row = static_cast<Eigen::Index>(in_a ? ch : ch - ca);
    for (std::size_t i = 0; i < kLatentRows; ++i)
      for (std::size_t j = 0; j < kLatentCols; ++j) {
        const double anchor = anchored ? config_.anchor.at(ch, i, j) : 0.0;
        out.mean.at(ch, i, j) = anchor + rho * (cond.current.at(ch, i, j) - anchor) +
                                delta(row, static_cast<Eigen::Index>((i / p) * pc + j / p));
      }
  }
  if (!out.mean.all_finite()) throw NumericalError("reference denoiser produced a non-finite mean");
  return out;
}

namespace {

class ReferenceStepper final : public Stepper {
 public:
  ReferenceStepper(Tensor mean, std::size_t channels_a, double spread_a, double spread_b,
                   const NoiseSchedule& schedule)
      : mean_(std::move(mean)), ca_(channels_a), spread_a_(spread_a), spread_b_(spread_b), schedule_(schedule) {}

  Tensor step(const Tensor& noisy, int n, int n_prev, Rng& rng) override {
    if (noisy.shape() != mean_.shape()) throw ValidationError("reference stepper: latent shape changed");
    const GaussianStep ga = gaussian_step(schedule_, n, n_prev, spread_a_);
    const GaussianStep gb = gaussian_step(schedule_, n, n_prev, spread_b_);
    Tensor out(noisy.shape());
    const std::size_t per_channel = noisy.slab_size();
    const std::size_t split = ca_ * per_channel;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const GaussianStep& g = i < split ? ga : gb;
      out[i] = g.mean_coef * mean_[i] + g.noisy_coef * noisy[i] + g.noise_std * rng.normal();
    }
    return out;
  }

 private:
  Tensor mean_;
  std::size_t ca_;
  double spread_a_;
  double spread_b_;
  const NoiseSchedule& schedule_;
};

}  // namespace

std::unique_ptr<Stepper> ReferenceDenoiser::bind(const Conditioning& cond) const {
  return std::make_unique<ReferenceStepper>(plan(cond).mean, config_.channels_a, config_.spread_a,
                                            config_.spread_b, schedule_);
}

bool EnsembleForecast::failed(int member_id) const {
  return std::any_of(failures.begin(), failures.end(),
                     [&](const MemberFailure& f) { return f.member_id == member_id; });
}

EnsembleForecast rollout_ensemble(const FieldSet& init_previous, const FieldSet& init_current,
                                  const RolloutConfig& config, const RolloutComponents& comp,
                                  const EnsembleOptions& options) {
  config.validate();
  require_compatible(init_previous, init_current, "initial states");
  if (add_days(init_previous.valid_time, 1) != init_current.valid_time)
    throw ValidationError("initial states must be consecutive days; got " + format_date(init_previous.valid_time) +
                          " and " + format_date(init_current.valid_time));

  const Tensor z_prev = embed(init_previous, comp.coder_a, comp.coder_b, comp.book_a, comp.book_b).stacked();
  const Tensor z_cur = embed(init_current, comp.coder_a, comp.coder_b, comp.book_a, comp.book_b).stacked();

  const auto members = static_cast<std::size_t>(config.n_members);
  EnsembleForecast out;
  out.init_date = init_current.valid_time;
  out.grid = init_current.grid;
  out.channels = init_current.channels;
  out.config = config.to_json();
  out.seeds.resize(members);
  for (std::size_t m = 0; m < members; ++m) out.seeds[m] = member_seed(config.master_seed, static_cast<int>(m));
  if (options.keep_members) out.members.resize(members);
  if (options.keep_latents) out.latents.resize(members);

  std::mutex mu;
  parallel_for(members, [&](std::size_t m) {
    const int id = static_cast<int>(m);
    try {
      MemberTrajectory traj =
          rollout_member(z_prev, z_cur, config, out.seeds[m], comp.denoiser, comp.schedule, id);
      std::vector<FieldSet> decoded;
      const bool decode = options.keep_members || (options.sink && options.sink->wants_decoded());
      if (decode) decoded.reserve(traj.latents.size());
      for (std::size_t k = 0; decode && k < traj.latents.size(); ++k)
        decoded.push_back(decode_latent(traj.latents[k], comp.coder_a, comp.coder_b, out.grid, out.channels,
                                        add_days(out.init_date, static_cast<int>(k) + 1)));
      std::lock_guard<std::mutex> lock(mu);
      if (options.sink) {
        std::vector<FieldSet> copy = options.keep_members ? decoded : std::vector<FieldSet>{};
        options.sink->accept(traj, options.keep_members ? std::move(copy) : std::move(decoded));
      }
      if (options.keep_members) out.members[m] = std::move(decoded);
      if (options.keep_latents) out.latents[m] = std::move(traj);
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(mu);
      out.failures.push_back({id, e.category(), e.what()});
    }
  });
  std::sort(out.failures.begin(), out.failures.end(),
            [](const MemberFailure& a, const MemberFailure& b) { return a.member_id < b.member_id; });
  return out;
}

}  // namespace s2sk
