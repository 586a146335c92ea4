#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "midiff/cli.hpp"
#include "midiff/config_file.hpp"
#include "midiff/image_io.hpp"
#include "support.hpp"

using namespace midiff;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig =
    "# small and fast\n"
    "data.size = 16\n"
    "data.train_count = 8\n"
    "data.test_count = 3\n"
    "model.base_width = 8\n"
    "model.depth = 1\n"
    "model.time_embed_dim = 8\n"
    "schedule.num_steps = 10\n"
    "train.iterations = 5\n"
    "train.batch_size = 2\n"
    "train.checkpoint_every = 0\n";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the command line and captures what it prints to stderr.
struct Run {
  int code;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "midiff");
  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const int code = run_cli(args);
  std::cerr.rdbuf(old);
  return {code, captured.str()};
}

fs::path tiny_config(const fs::path& dir) {
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  return dir / "tiny.cfg";
}

}  // namespace

TEST_CASE("config text round trip") {
  RunConfig cfg = parse_config(kTinyConfig);
  cfg.translate.t0 = 0.3;
  cfg.data.map_G = AppearanceMap::power(1.7);
  cfg.lmi.estimator.bandwidth = 0.1;
  const std::string text = render_config(cfg);
  const RunConfig again = parse_config(text);
  CHECK(render_config(again) == text);
  CHECK(again.translate.t0 == 0.3);
  CHECK(again.model.base_width == 8);
  CHECK(again.lmi.estimator.bandwidth == 0.1);
  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
  CHECK(render_config(parse_config(render_config(RunConfig{}))) == render_config(RunConfig{}));
}

TEST_CASE("config errors name the key") {
  CHECK_THROWS_WITH_AS(parse_config("model.widht = 3\n"), doctest::Contains("model.widht"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("train.iterations = many\n"), doctest::Contains("train.iterations"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("data.map_F = sepia\n"), doctest::Contains("data.map_F"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
  RunConfig bad;
  bad.lmi.window = 4;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("environment overrides") {
  CHECK(env_var_name("train.learning_rate") == "MIDIFF_TRAIN_LEARNING_RATE");
  CHECK(env_var_name("data.map_F") == "MIDIFF_DATA_MAP_F");
  ::setenv("MIDIFF_TRAIN_LEARNING_RATE", "0.005", 1);
  RunConfig cfg;
  apply_env_overrides(cfg);
  ::unsetenv("MIDIFF_TRAIN_LEARNING_RATE");
  CHECK(cfg.train.learning_rate == 0.005);
}

TEST_CASE("gen-data") {
  const auto dir = test::scratch("cli_gen");
  CHECK(cli({"gen-data"}).code == kExitUsage);
  CHECK(cli({"gen-data", "--out", (dir / "a").string()}).code == kExitOk);
  CHECK(list_images(dir / "a" / "train_F").size() == 256);
  CHECK(list_images(dir / "a" / "test_G").size() == 64);
  CHECK(list_images(dir / "a" / "test_F").size() == 64);
  CHECK(fs::exists(dir / "a" / "resolved_config.txt"));
  CHECK(cli({"gen-data", "--out", (dir / "b").string()}).code == kExitOk);
  for (const auto& p : list_images(dir / "a" / "test_G")) CHECK(slurp(p) == slurp(dir / "b" / "test_G" / p.filename()));
  CHECK(slurp(dir / "a" / "manifest.csv") == slurp(dir / "b" / "manifest.csv"));

  std::ofstream(dir / "bad.cfg") << "data.map_F = invert\n";
  const Run bad = cli({"gen-data", "--spec", (dir / "bad.cfg").string(), "--out", (dir / "c").string()});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("differ") != std::string::npos);
  CHECK(cli({"no-such-command"}).code == kExitUsage);
}

TEST_CASE("train, translate, eval, lmi-map and ablation") {
  const auto dir = test::scratch("cli_pipeline");
  const auto cfg = tiny_config(dir).string();
  const auto data = (dir / "data").string();
  REQUIRE(cli({"gen-data", "--spec", cfg, "--out", data}).code == kExitOk);

  const auto run = (dir / "run").string();
  REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", run}).code == kExitOk);
  CHECK(fs::exists(dir / "run" / "final.midf"));
  CHECK(fs::exists(dir / "run" / "resolved_config.txt"));
  CHECK(slurp(dir / "run" / "run_manifest.txt").find("seed = 0") != std::string::npos);

  SUBCASE("invalid key") {
    std::ofstream(dir / "typo.cfg") << "train.iteratons = 3\n";
    const Run r = cli({"train", "--config", (dir / "typo.cfg").string(), "--data", data, "--out", run});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("train.iteratons") != std::string::npos);
  }
  SUBCASE("resume continues the iteration count") {
    const auto more = (dir / "more").string();
    REQUIRE(cli({"train", "--config", cfg, "--data", data, "--out", more, "--resume", run + "/final.midf"}).code ==
            kExitOk);
    const std::string log = slurp(dir / "more" / "loss.csv");
    CHECK(log.find("\n6,") != std::string::npos);
    CHECK(log.find("\n10,") != std::string::npos);
    CHECK(log.find("\n1,") == std::string::npos);
  }
  SUBCASE("translate a single image and a directory") {
    const auto ck = run + "/final.midf";
    REQUIRE(cli({"translate", "--checkpoint", ck, "--guide", data + "/test_G/00000.pgm", "--out",
                 (dir / "one").string()}).code == kExitOk);
    const Image out = load_image(dir / "one" / "00000.pgm");
    CHECK(out.height() == 16);
    CHECK(out.width() == 16);
    CHECK(fs::exists(dir / "one" / "00000.jsonl"));

    REQUIRE(cli({"translate", "--checkpoint", ck, "--guide", data + "/test_G", "--out", (dir / "all").string(),
                 "--threads", "2"}).code == kExitOk);
    CHECK(list_images(dir / "all").size() == 3);
    CHECK(slurp(dir / "all" / "00000.pgm") == slurp(dir / "one" / "00000.pgm"));

    CHECK(cli({"translate", "--checkpoint", ck, "--guide", data + "/test_G", "--out", (dir / "b").string(), "--mode",
               "baseline"}).code == kExitUsage);
    CHECK(cli({"translate", "--checkpoint", ck, "--guide", data + "/test_G", "--out", (dir / "b").string(), "--mode",
               "baseline", "--t0", "0.5", "--keep-intermediates", "2"}).code == kExitOk);
    CHECK(fs::exists(dir / "b" / "00001_frames" / "index.csv"));
    CHECK(cli({"translate", "--checkpoint", ck, "--guide", data + "/test_G", "--out", (dir / "b").string(), "--mode",
               "gan"}).code == kExitUsage);

    std::ofstream(dir / "wide.cfg") << "model.base_width = 16\n";
    CHECK(cli({"translate", "--checkpoint", ck, "--config", (dir / "wide.cfg").string(), "--guide",
               data + "/test_G", "--out", (dir / "w").string()}).code == kExitUsage);
  }
  SUBCASE("eval") {
    const auto csv = (dir / "eval" / "m.csv").string();
    REQUIRE(cli({"eval", "--pred", data + "/test_F", "--guide", data + "/test_G", "--target", data + "/test_F",
                 "--out", csv}).code == kExitOk);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "pair_id,ssim_tar,ssim_src,mse,psnr,mi");
    for (int i = 0; i < 3; ++i) {
      std::getline(in, line);
      std::stringstream row(line);
      std::string id, ssim_tar;
      std::getline(row, id, ',');
      std::getline(row, ssim_tar, ',');
      CHECK(std::stod(ssim_tar) == doctest::Approx(1.0));
    }
    CHECK(cli({"eval", "--pred", data + "/train_F", "--guide", data + "/test_G", "--target", data + "/test_F",
               "--out", csv}).code == kExitUsage);
  }
  SUBCASE("lmi-map") {
    const auto g = data + "/test_G/00000.pgm";
    REQUIRE(cli({"lmi-map", "--guide", g, "--probe", g, "--out", (dir / "lmi" / "self.pgm").string()}).code ==
            kExitOk);
    std::ifstream shifts(dir / "lmi" / "self.shift.csv");
    std::string line;
    std::getline(shifts, line);
    CHECK(line == "row,col,dy,dx");
    int rows = 0;
    while (std::getline(shifts, line)) {
      ++rows;
      CHECK(line.substr(line.size() - 4) == ",0,0");
    }
    CHECK(rows == 256);
    const std::string json = slurp(dir / "lmi" / "self.json");
    for (const char* key : {"\"min\"", "\"max\"", "\"mean\""}) CHECK(json.find(key) != std::string::npos);
    CHECK(read_lmi_raw(dir / "lmi" / "self.lmi").height() == 16);

    save_image(Image(16, 16, 0.5), dir / "flat.pgm");
    REQUIRE(cli({"lmi-map", "--guide", (dir / "flat.pgm").string(), "--probe", g, "--out",
                 (dir / "lmi" / "flat.pgm").string()}).code == kExitOk);
    const Image flat_map = read_lmi_raw(dir / "lmi" / "flat.lmi");
    for (double v : flat_map.values()) CHECK(v == 0.0);
  }
  SUBCASE("ablation") {
    REQUIRE(cli({"ablation", "--checkpoint", run + "/final.midf", "--data", data, "--t0", "0.3,0.7", "--limit", "2",
                 "--out", (dir / "abl").string()}).code == kExitOk);
    const std::string summary = slurp(dir / "abl" / "summary.csv");
    CHECK(summary.rfind("mode,t0,mean_ssim_src", 0) == 0);
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);
    CHECK(list_images(dir / "abl" / "lmi").size() == 2);
  }
}
