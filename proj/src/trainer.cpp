#include "midiff/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace midiff {

namespace {

constexpr std::string_view kAdamPrefix = "adam/";

void adam_update(ParamSet<float>& params, const ParamSet<float>& g, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float step_size = static_cast<float>(cfg.learning_rate / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg.adam_epsilon);
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    auto& p = params.tensors[k].values;
    auto& m = state.m.tensors[k].values;
    auto& v = state.v.tensors[k].values;
    const auto& gk = g.tensors[k].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * gk[i];
      v[i] = b2 * v[i] + (1.0f - b2) * gk[i] * gk[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

std::string iteration_context(std::uint64_t it) { return " at iteration " + std::to_string(it); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train batch_size must be >= 1");
  if (num_iterations < 0) throw std::invalid_argument("train num_iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train adam betas must lie in [0, 1)");
  if (checkpoint_every < 0) throw std::invalid_argument("train checkpoint_every must be >= 0");
  if (!(t_eps > 0.0 && t_eps < 1.0)) throw std::invalid_argument("train t_eps must lie in (0, 1)");
  lmi.validate();
  schedule.validate();
  model.validate();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ParamSet<float> all = ckpt.params;
  if (ckpt.optimizer.m.tensors.size() == ckpt.params.tensors.size()) {
    for (const auto& t : ckpt.optimizer.m.tensors)
      all.tensors.push_back({std::string(kAdamPrefix) + "m/" + t.name, t.shape, t.values});
    for (const auto& t : ckpt.optimizer.v.tensors)
      all.tensors.push_back({std::string(kAdamPrefix) + "v/" + t.name, t.shape, t.values});
  }
  // The step counter is stored as two 16-bit halves so float32 holds it exactly.
  const auto step = static_cast<std::uint32_t>(ckpt.optimizer.step);
  all.tensors.push_back({std::string(kAdamPrefix) + "step", {2},
                         {static_cast<float>(step >> 16), static_cast<float>(step & 0xffffu)}});
  save_params(all, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ParamSet<float> all = load_params(path);
  Checkpoint ckpt;
  ParamSet<float> m, v;
  for (auto& t : all.tensors) {
    if (!t.name.starts_with(kAdamPrefix)) {
      ckpt.params.tensors.push_back(std::move(t));
      continue;
    }
    const std::string rest = t.name.substr(kAdamPrefix.size());
    if (rest == "step") {
      if (t.values.size() != 2) throw std::runtime_error("malformed optimizer step tensor");
      ckpt.optimizer.step = (static_cast<std::uint64_t>(t.values[0]) << 16) | static_cast<std::uint64_t>(t.values[1]);
    } else if (rest.starts_with("m/")) {
      t.name = rest.substr(2);
      m.tensors.push_back(std::move(t));
    } else if (rest.starts_with("v/")) {
      t.name = rest.substr(2);
      v.tensors.push_back(std::move(t));
    }
  }
  if (m.tensors.size() == ckpt.params.tensors.size() && v.tensors.size() == ckpt.params.tensors.size()) {
    ckpt.optimizer.m = std::move(m);
    ckpt.optimizer.v = std::move(v);
  } else {
    ckpt.optimizer.m = ckpt.params.zeros_like();
    ckpt.optimizer.v = ckpt.params.zeros_like();
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  Checkpoint ckpt = load_checkpoint(path);
  check_compatible(ckpt.params, cfg);
  return ckpt;
}

DsmItem make_dsm_item(const GuideCache& clean, Rng& rng, const TrainConfig& cfg) {
  DsmItem item;
  const double horizon = cfg.schedule.horizon;
  item.t = uniform(rng, cfg.t_eps * horizon, horizon);
  item.sigma = sigma(cfg.schedule, item.t);
  item.noisy = perturb(clean.guide(), item.t, cfg.schedule, rng);
  item.lmi = lmi_map(clean, item.noisy).values;
  item.scaled_target = dsm_target(clean.guide(), item.noisy, item.t, cfg.schedule);
  for (double& v : item.scaled_target.values()) v *= item.sigma;
  return item;
}

double dsm_item_loss(const Image& score, const Image& target, double sigma) {
  require_same_shape(score, target, "dsm_item_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    const double d = sigma * (score.values()[i] - target.values()[i]);
    acc += d * d;
  }
  return 0.5 * acc / static_cast<double>(score.size());
}

namespace {

std::vector<DsmItem> make_items(std::span<const GuideCache* const> clean, Rng& rng, const TrainConfig& cfg) {
  std::vector<DsmItem> items;
  items.reserve(clean.size());
  const std::uint64_t base = rng();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng item_rng = make_stream(base, i);
    items.push_back(make_dsm_item(*clean[i], item_rng, cfg));
  }
  return items;
}

std::vector<ModelInput> model_inputs(const std::vector<DsmItem>& items) {
  std::vector<ModelInput> inputs;
  for (const auto& it : items) inputs.push_back({&it.noisy, &it.lmi, it.sigma});
  return inputs;
}

// Loss on the raw network output o = sigma * s: 1/2 mean((o - sigma*target)^2).
OutputLossFn<float> output_loss(const std::vector<DsmItem>& items) {
  return [&items](std::size_t i, std::span<const float> out) {
    const auto target = items[i].scaled_target.values();
    const double n = static_cast<double>(out.size());
    OutputLoss<float> r;
    r.d_output.resize(out.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double d = static_cast<double>(out[k]) - target[k];
      acc += d * d;
      r.d_output[k] = static_cast<float>(d / n);
    }
    r.loss = 0.5 * acc / n;
    return r;
  };
}

}  // namespace

double dsm_loss(const ParamSet<float>& params, std::span<const Image> batch, Rng& rng, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
  std::vector<GuideCache> caches;
  caches.reserve(batch.size());
  for (const Image& img : batch) caches.emplace_back(img, cfg.lmi);
  std::vector<const GuideCache*> ptrs;
  for (const auto& c : caches) ptrs.push_back(&c);
  const std::vector<DsmItem> items = make_items(ptrs, rng, cfg);

  double total = 0.0;
  for (const DsmItem& item : items) {
    Image score = forward(cfg.model, params, {&item.noisy, &item.lmi, item.sigma});
    Image target = item.scaled_target;
    for (double& v : score.values()) v /= item.sigma;
    for (double& v : target.values()) v /= item.sigma;
    total += dsm_item_loss(score, target, item.sigma);
  }
  const double loss = total / static_cast<double>(items.size());
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
  return loss;
}

double moving_average(std::span<const double> values, std::size_t end, std::size_t window) {
  if (values.empty() || end >= values.size()) throw std::out_of_range("moving_average index");
  const std::size_t begin = end + 1 >= window ? end + 1 - window : 0;
  double acc = 0.0;
  for (std::size_t i = begin; i <= end; ++i) acc += values[i];
  return acc / static_cast<double>(end + 1 - begin);
}

TrainResult train(std::span<const Image> dataset, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  if (options.resume) {
    ckpt = *options.resume;
    check_compatible(ckpt.params, cfg.model);
  } else {
    ckpt.params = init_params<float>(cfg.model, cfg.seed);
    ckpt.optimizer.m = ckpt.params.zeros_like();
    ckpt.optimizer.v = ckpt.params.zeros_like();
  }

  std::vector<GuideCache> caches;
  caches.reserve(dataset.size());
  for (const Image& img : dataset) caches.emplace_back(img, cfg.lmi);

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "loss.csv";
    const bool fresh = !options.resume || !std::filesystem::exists(log_path);
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open " + log_path.string());
    if (fresh) log << "iter,loss,wall_ms\n";
  }

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t first = ckpt.iteration() + 1;
  const std::uint64_t last = ckpt.iteration() + static_cast<std::uint64_t>(cfg.num_iterations);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

  for (std::uint64_t it = first; it <= last; ++it) {
    Rng rng = make_stream(cfg.seed, it);
    std::vector<const GuideCache*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&caches[pick(rng)]);
    const std::vector<DsmItem> items = make_items(batch, rng, cfg);
    const std::vector<ModelInput> inputs = model_inputs(items);

    GradResult<float> g;
    try {
      g = grad<float>(cfg.model, ckpt.params, inputs, output_loss(items));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + iteration_context(it));
    }
    const double loss = g.loss / static_cast<double>(items.size());
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss" + iteration_context(it));
    const float inv_batch = 1.0f / static_cast<float>(items.size());
    for (auto& t : g.gradient.tensors)
      for (float& v : t.values) v *= inv_batch;

    adam_update(ckpt.params, g.gradient, ckpt.optimizer, cfg);
    result.losses.push_back(loss);

    if (log.is_open()) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      log << it << ',' << loss << ',' << ms.count() << '\n';
    }
    if (options.on_iteration) options.on_iteration(it, loss);
    if (!options.out_dir.empty() && cfg.checkpoint_every > 0 && it % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0)
      save_checkpoint(ckpt, options.out_dir / ("ckpt_" + std::to_string(it) + ".midf"));
  }

  if (!options.out_dir.empty()) save_checkpoint(ckpt, options.out_dir / "final.midf");
  return result;
}

}  // namespace midiff
