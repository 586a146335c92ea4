#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "midiff/lmi.hpp"
#include "midiff/score_model.hpp"
#include "midiff/sde.hpp"
#include "midiff/synth_data.hpp"
#include "midiff/trainer.hpp"
#include "midiff/translator.hpp"

namespace midiff {

/// Bad configuration or command usage (exit code 2 at the command line).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainKnobs {
  int batch_size = 8;
  int iterations = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int checkpoint_every = 500;
  double t_eps = 0.01;
};

struct TranslateKnobs {
  TranslationMode mode = TranslationMode::lmi_guided;
  std::optional<double> t0;
  int keep_intermediates = 0;
};

/// Everything a command can be configured with. Serialized as flat
/// `key = value` lines.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;  // 0: all hardware threads
  ModalityPairSpec data;
  DatasetLayout layout;
  LMIConfig lmi;
  NoiseSchedule schedule;
  ModelConfig model;
  TrainKnobs train;
  TranslateKnobs translate;

  TrainConfig train_config() const;
  TranslationConfig translation_config(const std::filesystem::path& checkpoint) const;
};

/// Known keys in rendering order.
std::vector<std::string> config_keys();

/// Sets one key from its text value. Unknown keys and malformed values throw
/// ConfigError naming the key.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

/// Applies `key = value` lines on top of `cfg`. Blank lines and lines starting
/// with '#' are ignored.
void apply_config_text(RunConfig& cfg, std::string_view text);
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key, one per line, values printed so that parsing restores them exactly.
std::string render_config(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

/// Environment variable for a key: MIDIFF_ + upper-cased key with '.' -> '_'.
std::string env_var_name(std::string_view key);

/// Applies any MIDIFF_* overrides present in the environment.
void apply_env_overrides(RunConfig& cfg);

/// Runs every component validator, rethrowing failures as ConfigError.
void validate(const RunConfig& cfg);

}  // namespace midiff
