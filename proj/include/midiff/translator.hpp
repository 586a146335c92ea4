#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "midiff/image.hpp"
#include "midiff/lmi.hpp"
#include "midiff/score_model.hpp"
#include "midiff/sde.hpp"

namespace midiff {

enum class TranslationMode { lmi_guided, perturbation_baseline };

std::string to_string(TranslationMode mode);
TranslationMode parse_translation_mode(std::string_view name);

struct TranslationConfig {
  std::filesystem::path checkpoint;
  ModelConfig model;
  LMIConfig lmi;
  NoiseSchedule schedule;  // num_steps lives here
  std::uint64_t seed = 0;
  int keep_intermediates = 0;  // trajectory stride, 0 = none
  TranslationMode mode = TranslationMode::lmi_guided;
  std::optional<double> t0;  // baseline only, in (0, 1]

  void validate() const;
};

struct StepRecord {
  int step = 0;
  double t = 0.0;
  double sigma = 0.0;
  double mean_lmi = 0.0;
};

struct TranslationResult {
  Image output;
  std::vector<StepRecord> record;
  std::vector<SampleStep> trajectory;  // kept frames only carry x
};

/// Runs the configured mode with already loaded parameters. `stream` selects
/// an independent noise stream under cfg.seed (e.g. the index of the guide).
TranslationResult translate(const Image& guide, const ParamSet<float>& params, const TranslationConfig& cfg,
                            std::uint64_t stream = 0);

/// Loads cfg.checkpoint, checks it against cfg.model, then translates.
TranslationResult translate(const Image& guide, const TranslationConfig& cfg, std::uint64_t stream = 0);

/// LMI-guided reverse SDE from pure noise, conditioned on the guide at every
/// step. The output is clamped to [0, 1].
TranslationResult translate_lmi_guided(const Image& guide, const ParamSet<float>& params,
                                       const TranslationConfig& cfg, std::uint64_t stream = 0);

/// Perturbation guidance: noise the guide to t0 * T and run the reverse chain
/// back to 0 with a zero LMI channel. t0 = 1 starts from pure noise.
TranslationResult translate_perturbation_baseline(const Image& guide, const ParamSet<float>& params,
                                                  const TranslationConfig& cfg, std::uint64_t stream = 0);

/// First reverse step index for a baseline start time t0.
int baseline_start_step(const NoiseSchedule& schedule, double t0);

/// JSON lines, one object per step: {"step":..,"sigma":..,"mean_lmi":..}.
void write_run_record(const std::vector<StepRecord>& record, const std::filesystem::path& path);

/// Writes kept frames as frame_<step>.pgm plus index.csv (step,t,sigma,epsilon).
void write_trajectory(const std::vector<SampleStep>& trajectory, const std::filesystem::path& dir);

}  // namespace midiff
