#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midiff/image.hpp"
#include "midiff/lmi.hpp"
#include "midiff/random.hpp"
#include "midiff/score_model.hpp"
#include "midiff/sde.hpp"

namespace midiff {

struct TrainConfig {
  int batch_size = 8;
  int num_iterations = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  int checkpoint_every = 500;  // 0 disables periodic checkpoints
  double t_eps = 0.01;         // t ~ U(t_eps * T, T)
  LMIConfig lmi;
  NoiseSchedule schedule;
  ModelConfig model;

  void validate() const;
};

struct AdamState {
  ParamSet<float> m;
  ParamSet<float> v;
  std::uint64_t step = 0;
};

/// Model parameters plus optimizer state. The iteration counter is the Adam
/// step count.
struct Checkpoint {
  ParamSet<float> params;
  AdamState optimizer;

  std::uint64_t iteration() const { return optimizer.step; }
};

/// Checkpoint files use the parameter container format; optimizer moments are
/// stored as extra tensors prefixed "adam/".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the model tensors against `cfg`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

/// One training example after noising: the perturbed state, its LMI map
/// against the clean image, and sigma * dsm_target (= -z).
struct DsmItem {
  double t = 0.0;
  double sigma = 0.0;
  Image noisy;
  Image lmi;
  Image scaled_target;
};

DsmItem make_dsm_item(const GuideCache& clean, Rng& rng, const TrainConfig& cfg);

/// 1/2 * sigma^2 * mean((score - target)^2) for a score prediction.
double dsm_item_loss(const Image& score, const Image& target, double sigma);

/// Batch mean of the LMI-conditioned denoising score matching loss.
double dsm_loss(const ParamSet<float>& params, std::span<const Image> batch, Rng& rng, const TrainConfig& cfg);

struct TrainOptions {
  std::filesystem::path out_dir;     // empty: no files written
  std::optional<Checkpoint> resume;  // continue from this state
  std::function<void(std::uint64_t iteration, double loss)> on_iteration;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per iteration run
};

/// Minimizes the conditioned DSM objective with Adam. Writes loss.csv
/// (iter,loss,wall_ms), periodic ckpt_<iter>.midf and final.midf when
/// out_dir is set.
TrainResult train(std::span<const Image> dataset, const TrainConfig& cfg, const TrainOptions& options = {});

/// Trailing moving average of `window` values ending at index `end`
/// (inclusive).
double moving_average(std::span<const double> values, std::size_t end, std::size_t window);

}  // namespace midiff
