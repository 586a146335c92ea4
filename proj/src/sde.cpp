#include "midiff/sde.hpp"

#include <cmath>
#include <string>

namespace midiff {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw std::invalid_argument("noise schedule requires 0 < sigma_min < sigma_max");
  if (!(horizon > 0.0)) throw std::invalid_argument("noise schedule horizon must be > 0");
  if (num_steps < 2) throw std::invalid_argument("noise schedule requires num_steps >= 2");
}

double sigma(const NoiseSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= schedule.horizon))
    throw std::out_of_range("time " + std::to_string(t) + " outside [0, T]");
  return schedule.sigma_min * std::pow(schedule.sigma_max / schedule.sigma_min, t / schedule.horizon);
}

double step_epsilon(const NoiseSchedule& schedule, int step_index) {
  const double t = schedule.time_at_step(step_index);
  const double s_hi = sigma(schedule, t);
  const double s_lo = sigma(schedule, std::max(0.0, t - schedule.dt()));
  return s_hi * s_hi - s_lo * s_lo;
}

Image perturb(const Image& x0, double t, const NoiseSchedule& schedule, Rng& rng) {
  const double s = sigma(schedule, t);
  Image out = standard_normal(x0.height(), x0.width(), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = x0.values()[i] + s * out.values()[i];
  return out;
}

Image dsm_target(const Image& x0, const Image& xt, double t, const NoiseSchedule& schedule) {
  require_same_shape(x0, xt, "dsm_target");
  const double s = sigma(schedule, t);
  const double inv = 1.0 / (s * s);
  Image out(x0.height(), x0.width());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = (x0.values()[i] - xt.values()[i]) * inv;
  return out;
}

SolverState reverse_step(SolverState state, const Image& score, const NoiseSchedule& schedule,
                         const StepOptions& options) {
  if (state.step_index < 0 || state.step_index >= schedule.num_steps)
    throw std::out_of_range("reverse_step past the end of the schedule");
  require_same_shape(state.x, score, "reverse_step");
  for (double v : score.values())
    if (!std::isfinite(v)) throw ScoreDivergedError();

  const double eps = step_epsilon(schedule, state.step_index);
  const double noise_scale = std::sqrt(eps);
  Image z = options.zero_noise ? Image(state.x.height(), state.x.width(), 0.0)
                               : standard_normal(state.x.height(), state.x.width(), state.rng);
  for (std::size_t i = 0; i < state.x.size(); ++i)
    state.x.values()[i] += eps * score.values()[i] + noise_scale * z.values()[i];
  ++state.step_index;
  return state;
}

SampleResult sample(const ScoreFn& score_fn, const NoiseSchedule& schedule, Rng& rng,
                    const SampleOptions& options) {
  schedule.validate();
  if (options.start_step < 0 || options.start_step >= schedule.num_steps)
    throw std::out_of_range("start_step outside the schedule");

  SolverState state;
  if (options.init) {
    state.x = *options.init;
  } else {
    if (options.height <= 0 || options.width <= 0) throw std::invalid_argument("sample: no init and no shape");
    state.x = standard_normal(options.height, options.width, rng);
    for (double& v : state.x.values()) v *= schedule.sigma_max;
  }
  state.step_index = options.start_step;
  state.rng = Rng(rng());

  SampleResult result;
  while (state.step_index < schedule.num_steps) {
    const int n = state.step_index;
    const double t = schedule.time_at_step(n);
    const Image score = score_fn(state.x, t);
    state = reverse_step(std::move(state), score, schedule, options.step);

    SampleStep rec{n, t, sigma(schedule, t), step_epsilon(schedule, n), {}};
    const bool last = state.step_index == schedule.num_steps;
    if (options.keep_every > 0 && ((n + 1) % options.keep_every == 0 || last)) rec.x = state.x;
    result.trajectory.push_back(std::move(rec));
  }
  result.final = std::move(state.x);
  return result;
}

}  // namespace midiff
