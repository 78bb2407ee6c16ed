#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "s2sk/rng.hpp"
#include "s2sk/tensor.hpp"

namespace s2sk {

enum class ScheduleKind { linear, cosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view s);

// Cumulative signal-retention coefficients alpha_bar[0..N] with
// alpha_bar[0] = 1 > alpha_bar[1] > ... > alpha_bar[N] > 0.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 0;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> alpha_bar;

  double abar(int n) const { return alpha_bar.at(static_cast<std::size_t>(n)); }

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);
};

// Linear betas from beta_start to beta_end (beta_1 = beta_start), or the
// cosine schedule with offset 0.008 and betas clipped at 0.999.
NoiseSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::linear,
                            double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(abar_n) * z0 + sqrt(1 - abar_n) * eps. Step 0 returns z0 unchanged.
Tensor forward_noise(const Tensor& z0, int n, const NoiseSchedule& schedule, const Tensor& eps);
Tensor forward_noise(const Tensor& z0, int n, const NoiseSchedule& schedule, Rng& rng);

// The two conditioning latents of a denoising step: the latest state and
// the one before it.
struct Conditioning {
  const Tensor& current;
  const Tensor& previous;
};

// One sampling run against fixed conditioning. Maps the latent at step n to
// a latent at an earlier step n_prev (n_prev = n - 1 for the unstrided
// chain). Must be deterministic given the rng state.
class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual Tensor step(const Tensor& noisy, int n, int n_prev, Rng& rng) = 0;
};

// Reverse-step model. bind() lets an implementation precompute anything
// that depends only on the conditioning; the returned stepper may keep
// references to the conditioning tensors.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::unique_ptr<Stepper> bind(const Conditioning& cond) const = 0;

  Tensor step(const Tensor& noisy, int n, int n_prev, const Conditioning& cond, Rng& rng) const {
    return bind(cond)->step(noisy, n, n_prev, rng);
  }
};

class FunctionDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Tensor(const Tensor& noisy, int n, int n_prev,
                                  const Conditioning& cond, Rng& rng)>;
  explicit FunctionDenoiser(Fn fn) : fn_(std::move(fn)) {}
  std::unique_ptr<Stepper> bind(const Conditioning& cond) const override;

 private:
  Fn fn_;
};

// Conditional law of z_m given z_n when every element of the clean data is
// N(mu, sigma^2): E[z_m | z_n] = mean_coef * mu + noisy_coef * z_n and
// sd[z_m | z_n] = noise_std.
struct GaussianStep {
  double mean_coef = 0.0;
  double noisy_coef = 0.0;
  double noise_std = 0.0;
};
GaussianStep gaussian_step(const NoiseSchedule& schedule, int n, int n_prev, double sigma);

// Exact reverse step for data distributed as N(mu, sigma^2) per element.
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  AnalyticGaussianDenoiser(double mu, double sigma, const NoiseSchedule& schedule);
  std::unique_ptr<Stepper> bind(const Conditioning& cond) const override;

  GaussianStep coefficients(int n, int n_prev) const { return gaussian_step(schedule_, n, n_prev, sigma_); }
  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

 private:
  double mu_;
  double sigma_;
  const NoiseSchedule& schedule_;
};

// Sample of the forward-chain posterior q(z_m | z_n, z_0 = x0_hat).
Tensor posterior_step(const Tensor& noisy, const Tensor& x0_hat, int n, int n_prev,
                      const NoiseSchedule& schedule, Rng& rng);

// Wraps a noise predictor eps_hat(z_n, n, cond) into a previous-state
// predictor: x0 = (z_n - sqrt(1 - abar_n) eps_hat) / sqrt(abar_n), then
// posterior_step.
class EpsilonAdapter final : public Denoiser {
 public:
  using NoisePredictor = std::function<Tensor(const Tensor& noisy, int n, const Conditioning& cond)>;
  EpsilonAdapter(NoisePredictor predictor, const NoiseSchedule& schedule)
      : predictor_(std::move(predictor)), schedule_(schedule) {}
  std::unique_ptr<Stepper> bind(const Conditioning& cond) const override;

 private:
  NoisePredictor predictor_;
  const NoiseSchedule& schedule_;
};

// Regression pair for the training objective: target z_{n-1} and input z_n
// drawn along one forward trajectory. The rng supplies the base noise for
// z_{n-1} first, then the increment to z_n.
struct TrainingPair {
  Tensor target;
  Tensor input;
};
TrainingPair coupled_noising(const Tensor& z0, int n, const NoiseSchedule& schedule, Rng& rng);

// Mean squared difference between z_{n-1} and the denoiser's prediction
// from z_n. No latitude weighting.
double ddpm_loss(const Tensor& z_next_true, const Denoiser& denoiser, const NoiseSchedule& schedule,
                 int n, const Conditioning& cond, Rng& rng);

// Uniformly strided sub-schedule t_k = floor(N (n_infer - k) / n_infer),
// k = 0..n_infer, so t_0 = N and t_{n_infer} = 0.
std::vector<int> inference_timesteps(int steps, int n_infer);

struct DiffusionSample {
  Tensor latent;
  int member_id = 0;
  std::vector<Tensor> trace;  // latents after each step when requested
};

// Ancestral sampling from a standard-normal latent shaped like the
// conditioning, along inference_timesteps(N, n_infer).
DiffusionSample sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Conditioning& cond, Rng& rng, int n_infer, bool keep_trace = false);

// Same chain from a caller-supplied start latent.
DiffusionSample sample_from(Tensor start, const Denoiser& denoiser, const NoiseSchedule& schedule,
                            const Conditioning& cond, Rng& rng, int n_infer, bool keep_trace = false);

}  // namespace s2sk
