#include "midiff/ablation.hpp"

#include <stdexcept>

namespace midiff {

std::vector<AblationEntry> run_ablation(const ParamSet<float>& params, const TranslationConfig& base,
                                        const std::vector<Image>& guides, const std::vector<Image>& targets,
                                        const std::vector<double>& t0_grid, const std::vector<std::string>& pair_ids,
                                        const std::function<void(const std::string&)>& progress) {
  if (guides.empty()) throw std::invalid_argument("run_ablation: no guides");
  if (guides.size() != targets.size()) throw std::invalid_argument("run_ablation: count mismatch");

  std::vector<AblationEntry> entries;
  entries.push_back({TranslationMode::lmi_guided, std::nullopt, {}, {}});
  for (double t0 : t0_grid) entries.push_back({TranslationMode::perturbation_baseline, t0, {}, {}});

  for (auto& e : entries) {
    TranslationConfig cfg = base;
    cfg.mode = e.mode;
    cfg.t0 = e.t0;
    cfg.keep_intermediates = 0;
    for (std::size_t i = 0; i < guides.size(); ++i) {
      e.outputs.push_back(translate(guides[i], params, cfg, i).output);
      if (progress)
        progress(to_string(e.mode) + (e.t0 ? " t0=" + std::to_string(*e.t0) : std::string()) + " pair " +
                 std::to_string(i + 1) + "/" + std::to_string(guides.size()));
    }
    e.report = evaluate_run(e.outputs, guides, targets, pair_ids);
  }
  return entries;
}

const AblationEntry& best_baseline(const std::vector<AblationEntry>& entries) {
  const AblationEntry* best = nullptr;
  for (const auto& e : entries)
    if (e.mode == TranslationMode::perturbation_baseline &&
        (!best || e.report.mean.ssim_src > best->report.mean.ssim_src))
      best = &e;
  if (!best) throw std::invalid_argument("no baseline entries");
  return *best;
}

}  // namespace midiff
