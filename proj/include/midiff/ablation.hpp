#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "midiff/image.hpp"
#include "midiff/metrics.hpp"
#include "midiff/score_model.hpp"
#include "midiff/translator.hpp"

namespace midiff {

struct AblationEntry {
  TranslationMode mode = TranslationMode::lmi_guided;
  std::optional<double> t0;
  std::vector<Image> outputs;
  MetricsReport report;
};

/// Translates every guide with the LMI-guided sampler and with the
/// perturbation baseline at each t0 in `t0_grid`, all from the same network
/// and the same per-pair noise streams (stream = pair index).
std::vector<AblationEntry> run_ablation(const ParamSet<float>& params, const TranslationConfig& base,
                                        const std::vector<Image>& guides, const std::vector<Image>& targets,
                                        const std::vector<double>& t0_grid,
                                        const std::vector<std::string>& pair_ids = {},
                                        const std::function<void(const std::string&)>& progress = {});

/// The baseline entry with the highest mean ssim_src (first on ties).
const AblationEntry& best_baseline(const std::vector<AblationEntry>& entries);

}  // namespace midiff
