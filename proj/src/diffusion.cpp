#include "s2sk/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s2sk/error.hpp"

namespace s2sk {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ValidationError("unknown schedule kind '" + std::string(s) + "'");
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"kind", to_string(kind)}, {"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  try {
    return make_schedule(j.at("steps").get<int>(),
                         parse_schedule_kind(j.value("kind", std::string("linear"))),
                         j.value("beta_start", 1e-4), j.value("beta_end", 0.02));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schedule json: ") + e.what());
  }
}

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("noise schedule needs N >= 1");
  NoiseSchedule s;
  s.kind = kind;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  if (kind == ScheduleKind::linear) {
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
      throw ValidationError("linear schedule needs 0 < beta_start <= beta_end < 1");
    for (int n = 1; n <= steps; ++n) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(n - 1) / (steps - 1);
      const double beta = beta_start + (beta_end - beta_start) * frac;
      s.alpha_bar[n] = s.alpha_bar[n - 1] * (1.0 - beta);
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int n = 1; n <= steps; ++n) {
      const double beta = std::min(1.0 - f(n) / f(n - 1), 0.999);
      s.alpha_bar[n] = s.alpha_bar[n - 1] * (1.0 - beta);
    }
  }
  for (int n = 1; n <= steps; ++n)
    if (!(s.alpha_bar[n] < s.alpha_bar[n - 1] && s.alpha_bar[n] > 0.0))
      throw ValidationError("noise schedule is not strictly decreasing at step " + std::to_string(n));
  return s;
}

namespace {

void check_step(const NoiseSchedule& schedule, int n, int lo) {
  if (n < lo || n > schedule.steps)
    throw ValidationError("diffusion step " + std::to_string(n) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(schedule.steps) + "]");
}

void check_transition(const NoiseSchedule& schedule, int n, int n_prev) {
  check_step(schedule, n, 1);
  if (n_prev < 0 || n_prev >= n)
    throw ValidationError("reverse step must go from n to some n_prev in [0, n)");
}

class FunctionStepper final : public Stepper {
 public:
  FunctionStepper(const FunctionDenoiser::Fn& fn, const Conditioning& cond) : fn_(fn), cond_(cond) {}
  Tensor step(const Tensor& noisy, int n, int n_prev, Rng& rng) override {
    return fn_(noisy, n, n_prev, cond_, rng);
  }

 private:
  const FunctionDenoiser::Fn& fn_;
  Conditioning cond_;
};

class GaussianStepper final : public Stepper {
 public:
  explicit GaussianStepper(const AnalyticGaussianDenoiser& owner) : owner_(owner) {}
  Tensor step(const Tensor& noisy, int n, int n_prev, Rng& rng) override {
    const GaussianStep g = owner_.coefficients(n, n_prev);
    Tensor out(noisy.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = g.mean_coef * owner_.mu() + g.noisy_coef * noisy[i];
      if (g.noise_std > 0.0) out[i] += g.noise_std * rng.normal();
    }
    return out;
  }

 private:
  const AnalyticGaussianDenoiser& owner_;
};

class EpsilonStepper final : public Stepper {
 public:
  EpsilonStepper(const EpsilonAdapter::NoisePredictor& predictor, const NoiseSchedule& schedule,
                 const Conditioning& cond)
      : predictor_(predictor), schedule_(schedule), cond_(cond) {}
  Tensor step(const Tensor& noisy, int n, int n_prev, Rng& rng) override {
    check_transition(schedule_, n, n_prev);
    const Tensor eps = predictor_(noisy, n, cond_);
    if (eps.shape() != noisy.shape()) throw ValidationError("noise predictor changed the latent shape");
    const double a = schedule_.abar(n);
    Tensor x0(noisy.shape());
    for (std::size_t i = 0; i < x0.size(); ++i)
      x0[i] = (noisy[i] - std::sqrt(1.0 - a) * eps[i]) / std::sqrt(a);
    return posterior_step(noisy, x0, n, n_prev, schedule_, rng);
  }

 private:
  const EpsilonAdapter::NoisePredictor& predictor_;
  const NoiseSchedule& schedule_;
  Conditioning cond_;
};

}  // namespace

Tensor forward_noise(const Tensor& z0, int n, const NoiseSchedule& schedule, const Tensor& eps) {
  check_step(schedule, n, 0);
  if (n == 0) return z0;
  if (eps.shape() != z0.shape()) throw ValidationError("forward noise: eps shape mismatch");
  const double a = schedule.abar(n);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * z0[i] + sn * eps[i];
  return out;
}

Tensor forward_noise(const Tensor& z0, int n, const NoiseSchedule& schedule, Rng& rng) {
  check_step(schedule, n, 0);
  if (n == 0) return z0;
  Tensor eps(z0.shape());
  rng.fill_normal(eps.values());
  return forward_noise(z0, n, schedule, eps);
}

std::unique_ptr<Stepper> FunctionDenoiser::bind(const Conditioning& cond) const {
  return std::make_unique<FunctionStepper>(fn_, cond);
}

GaussianStep gaussian_step(const NoiseSchedule& schedule, int n, int n_prev, double sigma) {
  check_transition(schedule, n, n_prev);
  const double an = schedule.abar(n), am = schedule.abar(n_prev);
  const double s2 = sigma * sigma;
  const double vn = an * s2 + (1.0 - an);
  const double vm = am * s2 + (1.0 - am);
  // Cov(z_m, z_n) = sqrt(an / am) * vm along the forward chain.
  const double k = std::sqrt(an / am) * vm / vn;
  const double var = std::max(0.0, vm - k * k * vn);
  return {std::sqrt(am) - k * std::sqrt(an), k, std::sqrt(var)};
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(double mu, double sigma, const NoiseSchedule& schedule)
    : mu_(mu), sigma_(sigma), schedule_(schedule) {
  if (!(sigma > 0.0)) throw ValidationError("analytic Gaussian denoiser needs sigma > 0");
}

std::unique_ptr<Stepper> AnalyticGaussianDenoiser::bind(const Conditioning&) const {
  return std::make_unique<GaussianStepper>(*this);
}

Tensor posterior_step(const Tensor& noisy, const Tensor& x0_hat, int n, int n_prev,
                      const NoiseSchedule& schedule, Rng& rng) {
  check_transition(schedule, n, n_prev);
  if (x0_hat.shape() != noisy.shape()) throw ValidationError("posterior step: shape mismatch");
  const double an = schedule.abar(n), am = schedule.abar(n_prev);
  const double alpha = an / am;
  const double c_x0 = std::sqrt(am) * (1.0 - alpha) / (1.0 - an);
  const double c_z = std::sqrt(alpha) * (1.0 - am) / (1.0 - an);
  const double sd = std::sqrt(std::max(0.0, (1.0 - am) * (1.0 - alpha) / (1.0 - an)));
  Tensor out(noisy.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = c_x0 * x0_hat[i] + c_z * noisy[i];
    if (sd > 0.0) out[i] += sd * rng.normal();
  }
  return out;
}

std::unique_ptr<Stepper> EpsilonAdapter::bind(const Conditioning& cond) const {
  return std::make_unique<EpsilonStepper>(predictor_, schedule_, cond);
}

TrainingPair coupled_noising(const Tensor& z0, int n, const NoiseSchedule& schedule, Rng& rng) {
  check_step(schedule, n, 1);
  Tensor eps(z0.shape());
  rng.fill_normal(eps.values());
  Tensor target = forward_noise(z0, n - 1, schedule, eps);
  const double alpha = schedule.abar(n) / schedule.abar(n - 1);
  const double sa = std::sqrt(alpha), sn = std::sqrt(1.0 - alpha);
  Tensor input(z0.shape());
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = sa * target[i] + sn * rng.normal();
  return {std::move(target), std::move(input)};
}

double ddpm_loss(const Tensor& z_next_true, const Denoiser& denoiser, const NoiseSchedule& schedule,
                 int n, const Conditioning& cond, Rng& rng) {
  check_step(schedule, n, 1);
  if (z_next_true.size() == 0) throw ValidationError("ddpm loss of an empty latent");
  const TrainingPair pair = coupled_noising(z_next_true, n, schedule, rng);
  const Tensor pred = denoiser.step(pair.input, n, n - 1, cond, rng);
  if (pred.shape() != pair.target.shape()) throw ValidationError("denoiser changed the latent shape");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pair.target[i] - pred[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

std::vector<int> inference_timesteps(int steps, int n_infer) {
  if (steps < 1) throw ValidationError("schedule needs N >= 1");
  if (n_infer < 1 || n_infer > steps)
    throw ValidationError("n_infer must lie in [1, N]; got " + std::to_string(n_infer));
  std::vector<int> t(static_cast<std::size_t>(n_infer) + 1);
  for (int k = 0; k <= n_infer; ++k)
    t[k] = static_cast<int>((static_cast<long long>(steps) * (n_infer - k)) / n_infer);
  return t;
}

DiffusionSample sample(const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Conditioning& cond, Rng& rng, int n_infer, bool keep_trace) {
  inference_timesteps(schedule.steps, n_infer);  // validate before drawing
  Tensor start(cond.current.shape());
  rng.fill_normal(start.values());
  return sample_from(std::move(start), denoiser, schedule, cond, rng, n_infer, keep_trace);
}

DiffusionSample sample_from(Tensor start, const Denoiser& denoiser, const NoiseSchedule& schedule,
                            const Conditioning& cond, Rng& rng, int n_infer, bool keep_trace) {
  const auto t = inference_timesteps(schedule.steps, n_infer);
  auto stepper = denoiser.bind(cond);
  DiffusionSample out;
  out.latent = std::move(start);
  for (int k = 0; k < n_infer; ++k) {
    Tensor next = stepper->step(out.latent, t[k], t[k + 1], rng);
    if (next.shape() != out.latent.shape()) throw ValidationError("denoiser changed the latent shape");
    out.latent = std::move(next);
    if (keep_trace) out.trace.push_back(out.latent);
  }
  return out;
}

}  // namespace s2sk
