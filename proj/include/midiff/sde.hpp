#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "midiff/image.hpp"
#include "midiff/random.hpp"

namespace midiff {

/// Geometric variance-exploding schedule on t in [0, T], T = 1:
/// sigma(t) = sigma_min * (sigma_max / sigma_min)^(t / T).
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double horizon = 1.0;
  int num_steps = 500;

  void validate() const;
  double dt() const { return horizon / num_steps; }
  /// Physical time at reverse step n: T - n * dt.
  double time_at_step(int n) const { return horizon - n * dt(); }
};

double sigma(const NoiseSchedule& schedule, double t);

/// Variance added between consecutive grid times, sigma(t_n)^2 - sigma(t_n - dt)^2.
double step_epsilon(const NoiseSchedule& schedule, int step_index);

/// x0 + sigma(t) z, z ~ N(0, I).
Image perturb(const Image& x0, double t, const NoiseSchedule& schedule, Rng& rng);

/// Denoising score matching target (x0 - xt) / sigma(t)^2.
Image dsm_target(const Image& x0, const Image& xt, double t, const NoiseSchedule& schedule);

class ScoreDivergedError : public std::runtime_error {
 public:
  ScoreDivergedError() : std::runtime_error("score diverged") {}
};

struct SolverState {
  Image x;
  int step_index = 0;
  Rng rng;
};

struct StepOptions {
  bool zero_noise = false;  // test hook: drop the Wiener increment
};

/// One Euler-Maruyama step of the reverse-time VE SDE:
/// x' = x + eps * score + sqrt(eps) * z.
SolverState reverse_step(SolverState state, const Image& score, const NoiseSchedule& schedule,
                         const StepOptions& options = {});

/// Score evaluated at state x and physical time t.
using ScoreFn = std::function<Image(const Image& x, double t)>;

struct SampleOptions {
  std::optional<Image> init;  // default: N(0, sigma_max^2 I) of shape (height, width)
  int height = 0;
  int width = 0;
  int start_step = 0;   // first reverse step to run
  int keep_every = 0;   // keep every m-th intermediate when > 0
  StepOptions step;
};

struct SampleStep {
  int step = 0;
  double t = 0.0;
  double sigma = 0.0;
  double epsilon = 0.0;
  Image x;  // state after the step; empty unless kept
};

struct SampleResult {
  Image final;
  std::vector<SampleStep> trajectory;  // one entry per step run
};

SampleResult sample(const ScoreFn& score_fn, const NoiseSchedule& schedule, Rng& rng,
                    const SampleOptions& options);

}  // namespace midiff
