#include "midiff/translator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "midiff/image_io.hpp"
#include "midiff/trainer.hpp"

namespace midiff {

std::string to_string(TranslationMode mode) {
  return mode == TranslationMode::lmi_guided ? "lmi" : "baseline";
}

TranslationMode parse_translation_mode(std::string_view name) {
  if (name == "lmi" || name == "lmi_guided") return TranslationMode::lmi_guided;
  if (name == "baseline" || name == "perturbation_baseline") return TranslationMode::perturbation_baseline;
  throw std::invalid_argument("unknown translation mode '" + std::string(name) + "'");
}

void TranslationConfig::validate() const {
  model.validate();
  lmi.validate();
  schedule.validate();
  if (keep_intermediates < 0) throw std::invalid_argument("keep_intermediates must be >= 0");
  if (mode == TranslationMode::perturbation_baseline) {
    if (!t0) throw std::invalid_argument("baseline mode requires t0");
    if (!(*t0 > 0.0 && *t0 <= 1.0)) throw std::invalid_argument("t0 must lie in (0, 1]");
  }
}

int baseline_start_step(const NoiseSchedule& schedule, double t0) {
  const int n = static_cast<int>(std::lround((1.0 - t0) * schedule.num_steps));
  return std::clamp(n, 0, schedule.num_steps - 1);
}

namespace {

void check_guide(const Image& guide, const ModelConfig& model) {
  if (guide.empty()) throw std::invalid_argument("empty guide image");
  const int f = 1 << model.depth;
  if (guide.height() % f != 0 || guide.width() % f != 0)
    throw std::invalid_argument("guide size must be divisible by " + std::to_string(f) + " for this model");
}

Image model_score(const TranslationConfig& cfg, const ParamSet<float>& params, const Image& x, const Image& lmi,
                  double t) {
  const double s = sigma(cfg.schedule, t);
  Image out = forward(cfg.model, params, {&x, &lmi, s});
  for (double& v : out.values()) v /= s;
  return out;
}

TranslationResult finish(SampleResult sampled, std::vector<StepRecord> record) {
  TranslationResult result;
  result.output = clamp(sampled.final, 0.0, 1.0);
  result.record = std::move(record);
  for (auto& st : sampled.trajectory)
    if (!st.x.empty()) result.trajectory.push_back(std::move(st));
  return result;
}

}  // namespace

TranslationResult translate_lmi_guided(const Image& guide, const ParamSet<float>& params,
                                       const TranslationConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  check_guide(guide, cfg.model);
  const GuideCache cache(guide, cfg.lmi);
  std::vector<StepRecord> record;
  record.reserve(static_cast<std::size_t>(cfg.schedule.num_steps));

  const ScoreFn score = [&](const Image& x, double t) {
    const LMIMap lmi = lmi_map(cache, x);
    record.push_back({static_cast<int>(record.size()), t, sigma(cfg.schedule, t), mean(lmi.values)});
    return model_score(cfg, params, x, lmi.values, t);
  };

  Rng rng = make_stream(cfg.seed, stream);
  SampleOptions opts;
  opts.height = guide.height();
  opts.width = guide.width();
  opts.keep_every = cfg.keep_intermediates;
  SampleResult sampled = sample(score, cfg.schedule, rng, opts);
  return finish(std::move(sampled), std::move(record));
}

TranslationResult translate_perturbation_baseline(const Image& guide, const ParamSet<float>& params,
                                                  const TranslationConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  if (!cfg.t0) throw std::invalid_argument("baseline mode requires t0");
  check_guide(guide, cfg.model);
  const Image zero_lmi(guide.height(), guide.width(), 0.0);
  const int start = *cfg.t0 >= 1.0 ? 0 : baseline_start_step(cfg.schedule, *cfg.t0);
  std::vector<StepRecord> record;

  const ScoreFn score = [&](const Image& x, double t) {
    record.push_back({start + static_cast<int>(record.size()), t, sigma(cfg.schedule, t), 0.0});
    return model_score(cfg, params, x, zero_lmi, t);
  };

  Rng rng = make_stream(cfg.seed, stream);
  SampleOptions opts;
  opts.height = guide.height();
  opts.width = guide.width();
  opts.start_step = start;
  opts.keep_every = cfg.keep_intermediates;
  if (*cfg.t0 < 1.0) opts.init = perturb(guide, cfg.schedule.time_at_step(start), cfg.schedule, rng);
  SampleResult sampled = sample(score, cfg.schedule, rng, opts);
  return finish(std::move(sampled), std::move(record));
}

TranslationResult translate(const Image& guide, const ParamSet<float>& params, const TranslationConfig& cfg,
                            std::uint64_t stream) {
  return cfg.mode == TranslationMode::lmi_guided ? translate_lmi_guided(guide, params, cfg, stream)
                                                 : translate_perturbation_baseline(guide, params, cfg, stream);
}

TranslationResult translate(const Image& guide, const TranslationConfig& cfg, std::uint64_t stream) {
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint, cfg.model);
  return translate(guide, ckpt.params, cfg, stream);
}

void write_run_record(const std::vector<StepRecord>& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& r : record) {
    const nlohmann::json j = {{"step", r.step}, {"t", r.t}, {"sigma", r.sigma}, {"mean_lmi", r.mean_lmi}};
    out << j.dump() << '\n';
  }
}

void write_trajectory(const std::vector<SampleStep>& trajectory, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  if (!index) throw std::runtime_error("cannot write trajectory index in " + dir.string());
  index << "step,t,sigma,epsilon,file\n";
  index.precision(17);
  for (const auto& st : trajectory) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.pgm", st.step);
    save_image(st.x, dir / name);
    index << st.step << ',' << st.t << ',' << st.sigma << ',' << st.epsilon << ',' << name << '\n';
  }
}

}  // namespace midiff
