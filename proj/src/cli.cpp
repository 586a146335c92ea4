#include "midiff/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "midiff/ablation.hpp"
#include "midiff/config_file.hpp"
#include "midiff/image_io.hpp"
#include "midiff/lmi.hpp"
#include "midiff/metrics.hpp"
#include "midiff/parallel.hpp"
#include "midiff/synth_data.hpp"
#include "midiff/trainer.hpp"
#include "midiff/translator.hpp"

namespace midiff {

namespace fs = std::filesystem;

namespace {

constexpr const char* kResolvedName = "resolved_config.txt";

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f, const char* config_flag = "--config") {
  cmd->add_option(config_flag, f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "random seed (overrides the config)");
  cmd->add_option("--threads", f.threads, "worker threads, 0 = all cores");
}

// defaults < base file < --config file < MIDIFF_* environment < flags
RunConfig resolve(const CommonFlags& f, const std::optional<fs::path>& base = std::nullopt) {
  RunConfig cfg;
  if (base && fs::exists(*base)) cfg = load_config(*base);
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot read config file " + f.config);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str());
  }
  apply_env_overrides(cfg);
  if (f.seed) cfg.seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  validate(cfg);
  set_thread_count(cfg.threads);
  return cfg;
}

fs::path sidecar(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension(suffix);
  return p;
}

std::vector<fs::path> images_in(const fs::path& p) {
  if (fs::is_directory(p)) return list_images(p);
  if (!fs::exists(p)) throw ConfigError("no such file or directory: " + p.string());
  return {p};
}

int cmd_gen_data(const CommonFlags& flags, const std::string& out) {
  const RunConfig cfg = resolve(flags);
  ModalityPairSpec spec = cfg.data;
  spec.seed = cfg.seed;
  write_dataset(spec, cfg.layout, out);
  save_config(cfg, fs::path(out) / kResolvedName);
  std::cerr << "wrote " << cfg.layout.train_count << " training and " << cfg.layout.test_count << " test pairs to "
            << out << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& data, const std::string& out, const std::string& resume) {
  const RunConfig cfg = resolve(flags);
  const fs::path data_dir = fs::is_directory(fs::path(data) / "train_F") ? fs::path(data) / "train_F" : fs::path(data);
  std::vector<Image> images;
  for (const auto& p : images_in(data_dir)) images.push_back(load_image(p));
  if (images.empty()) throw ConfigError("no training images in " + data_dir.string());

  fs::create_directories(out);
  save_config(cfg, fs::path(out) / kResolvedName);
  {
    std::ofstream manifest(fs::path(out) / "run_manifest.txt");
    manifest << "# training run\n# data_dir = " << data_dir.string() << "\n# images = " << images.size()
             << "\n# parameters = " << parameter_count(cfg.model) << "\n";
    if (!resume.empty()) manifest << "# resumed_from = " << resume << "\n";
    manifest << render_config(cfg);
  }

  TrainOptions opts;
  opts.out_dir = out;
  if (!resume.empty()) opts.resume = load_checkpoint(resume, cfg.model);
  const std::uint64_t report_every = std::max(1, cfg.train.iterations / 20);
  opts.on_iteration = [&](std::uint64_t it, double loss) {
    if (it % report_every == 0) std::cerr << "iter " << it << " loss " << loss << "\n";
  };
  const TrainResult r = train(images, cfg.train_config(), opts);
  std::cerr << "final checkpoint at iteration " << r.checkpoint.iteration() << ": "
            << (fs::path(out) / "final.midf").string() << "\n";
  return kExitOk;
}

int cmd_translate(const CommonFlags& flags, const std::string& checkpoint, const std::string& guide,
                  const std::optional<std::string>& mode, const std::optional<double>& t0,
                  const std::optional<int>& keep, const std::string& out) {
  RunConfig cfg = resolve(flags, fs::path(checkpoint).parent_path() / kResolvedName);
  if (mode) {
    try {
      cfg.translate.mode = parse_translation_mode(*mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (t0) cfg.translate.t0 = *t0;
  if (keep) cfg.translate.keep_intermediates = *keep;
  if (cfg.translate.mode == TranslationMode::perturbation_baseline && !cfg.translate.t0)
    throw ConfigError("--mode baseline requires --t0");
  validate(cfg);
  const TranslationConfig tcfg = cfg.translation_config(checkpoint);
  try {
    tcfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const std::vector<fs::path> guides = images_in(guide);
  if (guides.empty()) throw ConfigError("no guide images in " + guide);
  const Checkpoint ckpt = [&] {
    try {
      return load_checkpoint(checkpoint, cfg.model);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("checkpoint does not match the model config: ") + e.what());
    }
  }();

  fs::create_directories(out);
  save_config(cfg, fs::path(out) / kResolvedName);
  for (std::size_t i = 0; i < guides.size(); ++i) {
    const Image g = load_image(guides[i]);
    const TranslationResult r = translate(g, ckpt.params, tcfg, i);
    const std::string stem = guides[i].stem().string();
    save_image(r.output, fs::path(out) / (stem + ".pgm"));
    write_run_record(r.record, fs::path(out) / (stem + ".jsonl"));
    if (!r.trajectory.empty()) write_trajectory(r.trajectory, fs::path(out) / (stem + "_frames"));
    std::cerr << "translated " << guides[i].filename().string() << " (" << (i + 1) << "/" << guides.size() << ")\n";
  }
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& pred, const std::string& guide, const std::string& target,
             const std::string& out) {
  const RunConfig cfg = resolve(flags);
  const auto p = images_in(pred);
  const auto g = images_in(guide);
  const auto t = images_in(target);
  if (p.size() != g.size() || p.size() != t.size())
    throw ConfigError("image count mismatch: pred " + std::to_string(p.size()) + ", guide " + std::to_string(g.size()) +
                      ", target " + std::to_string(t.size()));
  if (p.empty()) throw ConfigError("no images to evaluate");
  std::vector<Image> pi, gi, ti;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pi.push_back(load_image(p[i]));
    gi.push_back(load_image(g[i]));
    ti.push_back(load_image(t[i]));
    ids.push_back(p[i].stem().string());
  }
  const MetricsReport report = evaluate_run(pi, gi, ti, ids);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_metrics_csv(report, out);
  save_config(cfg, sidecar(out, ".config.txt"));
  std::cerr << "mean ssim_tar " << report.mean.ssim_tar << ", ssim_src " << report.mean.ssim_src << "\n";
  return kExitOk;
}

int cmd_lmi_map(const CommonFlags& flags, const std::string& guide, const std::string& probe, const std::string& out) {
  const RunConfig cfg = resolve(flags);
  const Image g = load_image(guide);
  const Image p = load_image(probe);
  if (!g.same_shape(p)) throw ConfigError("guide and probe shapes differ");
  const LMIMap map = lmi_map(g, p, cfg.lmi);

  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_lmi_pgm(map, out);
  write_lmi_raw(map, sidecar(out, ".lmi"));
  {
    std::ofstream shifts(sidecar(out, ".shift.csv"));
    shifts << "row,col,dy,dx\n";
    for (int r = 0; r < map.values.height(); ++r)
      for (int c = 0; c < map.values.width(); ++c)
        shifts << r << ',' << c << ',' << map.shift(r, c).dy << ',' << map.shift(r, c).dx << '\n';
  }
  const auto [mn, mx] = std::minmax_element(map.values.values().begin(), map.values.values().end());
  const nlohmann::json summary = {{"min", *mn},
                                  {"max", *mx},
                                  {"mean", mean(map.values)},
                                  {"height", map.values.height()},
                                  {"width", map.values.width()},
                                  {"clamped_samples", map.clamped_samples}};
  std::ofstream(sidecar(out, ".json")) << summary.dump(2) << '\n';
  save_config(cfg, sidecar(out, ".config.txt"));
  return kExitOk;
}

int cmd_ablation(const CommonFlags& flags, const std::string& checkpoint, const std::string& data,
                 const std::vector<double>& t0_grid, int limit, const std::string& out) {
  const RunConfig cfg = resolve(flags, fs::path(checkpoint).parent_path() / kResolvedName);
  for (double t0 : t0_grid)
    if (!(t0 > 0.0 && t0 <= 1.0)) throw ConfigError("t0 values must lie in (0, 1]");
  auto gp = images_in(fs::path(data) / "test_G");
  auto tp = images_in(fs::path(data) / "test_F");
  if (gp.size() != tp.size()) throw ConfigError("test_G and test_F counts differ");
  if (limit > 0 && static_cast<std::size_t>(limit) < gp.size()) {
    gp.resize(static_cast<std::size_t>(limit));
    tp.resize(static_cast<std::size_t>(limit));
  }
  std::vector<Image> guides, targets;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < gp.size(); ++i) {
    guides.push_back(load_image(gp[i]));
    targets.push_back(load_image(tp[i]));
    ids.push_back(gp[i].stem().string());
  }
  TranslationConfig tcfg = cfg.translation_config(checkpoint);
  const Checkpoint ckpt = load_checkpoint(checkpoint, cfg.model);

  fs::create_directories(out);
  save_config(cfg, fs::path(out) / kResolvedName);
  const auto entries = run_ablation(ckpt.params, tcfg, guides, targets, t0_grid, ids,
                                    [](const std::string& msg) { std::cerr << msg << "\n"; });

  std::ofstream summary(fs::path(out) / "summary.csv");
  summary.precision(10);
  summary << "mode,t0,mean_ssim_src,mean_ssim_tar,mean_mse,mean_psnr,mean_mi\n";
  for (const auto& e : entries) {
    const std::string name = e.t0 ? "baseline_t0_" + std::to_string(*e.t0).substr(0, 4) : "lmi";
    const fs::path dir = fs::path(out) / name;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < e.outputs.size(); ++i) save_image(e.outputs[i], dir / (ids[i] + ".pgm"));
    write_metrics_csv(e.report, fs::path(out) / (name + ".csv"));
    summary << to_string(e.mode) << ',' << (e.t0 ? std::to_string(*e.t0) : std::string()) << ','
            << e.report.mean.ssim_src << ',' << e.report.mean.ssim_tar << ',' << e.report.mean.mse << ','
            << e.report.mean.psnr << ',' << e.report.mean.mi << '\n';
  }
  const auto& best = best_baseline(entries);
  std::cerr << "lmi mean ssim_src " << entries.front().report.mean.ssim_src << ", best baseline (t0=" << *best.t0
            << ") " << best.report.mean.ssim_src << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"LMI-guided score diffusion for zero-shot image translation", "midiff"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, tr_flags, eval_flags, lmi_flags, abl_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic paired dataset");
  add_common(gen, gen_flags, "--spec");
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string train_data, train_out, train_resume;
  auto* tr = app.add_subcommand("train", "train the score network on target images");
  add_common(tr, train_flags);
  tr->add_option("--data", train_data, "dataset directory (uses train_F/ when present)")->required();
  tr->add_option("--out", train_out, "output directory")->required();
  tr->add_option("--resume", train_resume, "checkpoint to continue from");

  std::string ckpt, guide, tr_out;
  std::optional<std::string> mode;
  std::optional<double> t0;
  std::optional<int> keep;
  auto* trans = app.add_subcommand("translate", "translate guide images");
  add_common(trans, tr_flags);
  trans->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  trans->add_option("--guide", guide, "guide image or directory")->required();
  trans->add_option("--mode", mode, "lmi | baseline");
  trans->add_option("--t0", t0, "baseline start time in (0, 1]");
  trans->add_option("--keep-intermediates", keep, "write every n-th reverse step");
  trans->add_option("--out", tr_out, "output directory")->required();

  std::string pred, eval_guide, target, eval_out;
  auto* ev = app.add_subcommand("eval", "score translations against guides and targets");
  add_common(ev, eval_flags);
  ev->add_option("--pred", pred, "translated images")->required();
  ev->add_option("--guide", eval_guide, "guide images")->required();
  ev->add_option("--target", target, "ground-truth target images")->required();
  ev->add_option("--out", eval_out, "CSV report path")->required();

  std::string lmi_guide, lmi_probe, lmi_out;
  auto* lm = app.add_subcommand("lmi-map", "compute the local-wise MI map of two images");
  add_common(lm, lmi_flags);
  lm->add_option("--guide", lmi_guide, "guide image")->required();
  lm->add_option("--probe", lmi_probe, "probe image")->required();
  lm->add_option("--out", lmi_out, "output PGM")->required();

  std::string abl_ckpt, abl_data, abl_out;
  std::vector<double> abl_t0{0.3, 0.5, 0.7};
  int abl_limit = 0;
  auto* ab = app.add_subcommand("ablation", "compare LMI guidance with the perturbation baseline");
  add_common(ab, abl_flags);
  ab->add_option("--checkpoint", abl_ckpt, "trained checkpoint")->required();
  ab->add_option("--data", abl_data, "dataset directory with test_G/ and test_F/")->required();
  ab->add_option("--t0", abl_t0, "baseline start times")->delimiter(',');
  ab->add_option("--limit", abl_limit, "use only the first n pairs");
  ab->add_option("--out", abl_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_flags, gen_out);
    if (tr->parsed()) return cmd_train(train_flags, train_data, train_out, train_resume);
    if (trans->parsed()) return cmd_translate(tr_flags, ckpt, guide, mode, t0, keep, tr_out);
    if (ev->parsed()) return cmd_eval(eval_flags, pred, eval_guide, target, eval_out);
    if (lm->parsed()) return cmd_lmi_map(lmi_flags, lmi_guide, lmi_probe, lmi_out);
    if (ab->parsed()) return cmd_ablation(abl_flags, abl_ckpt, abl_data, abl_t0, abl_limit, abl_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace midiff
