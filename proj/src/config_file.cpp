#include "midiff/config_file.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace midiff {

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.batch_size = train.batch_size;
  t.num_iterations = train.iterations;
  t.learning_rate = train.learning_rate;
  t.beta1 = train.beta1;
  t.beta2 = train.beta2;
  t.adam_epsilon = train.adam_epsilon;
  t.seed = seed;
  t.checkpoint_every = train.checkpoint_every;
  t.t_eps = train.t_eps;
  t.lmi = lmi;
  t.schedule = schedule;
  t.model = model;
  return t;
}

TranslationConfig RunConfig::translation_config(const std::filesystem::path& checkpoint) const {
  TranslationConfig t;
  t.checkpoint = checkpoint;
  t.model = model;
  t.lmi = lmi;
  t.schedule = schedule;
  t.seed = seed;
  t.keep_intermediates = translate.keep_intermediates;
  t.mode = translate.mode;
  t.t0 = translate.t0;
  return t;
}

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_num(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("invalid value '" + std::string(text) + "' for config key '" + std::string(key) + "'");
  return v;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field int_field(std::string key, M member) {
  return {std::move(key), [member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_num<std::remove_reference_t<decltype(std::invoke(member, c))>>(k, v);
          },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <class M>
Field double_field(std::string key, M member) {
  return {std::move(key), [member](RunConfig& c, std::string_view k, std::string_view v) {
            std::invoke(member, c) = parse_num<double>(k, v);
          },
          [member](const RunConfig& c) { return fmt_double(std::invoke(member, c)); }};
}

// Wrap a parser that throws std::invalid_argument so errors name the key.
template <class F>
auto keyed(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("invalid value for config key '" + std::string(key) + "': " + e.what());
  }
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_field("seed", [](auto& c) -> auto& { return c.seed; }));
    f.push_back(int_field("threads", [](auto& c) -> auto& { return c.threads; }));

    f.push_back({"data.structure",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.data.structure = keyed(k, [&] { return parse_structure(v); });
                 },
                 [](const RunConfig& c) { return to_string(c.data.structure); }});
    f.push_back(int_field("data.size", [](auto& c) -> auto& { return c.data.size; }));
    f.push_back({"data.map_F",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.data.map_F = keyed(k, [&] { return parse_appearance(v); });
                 },
                 [](const RunConfig& c) { return to_string(c.data.map_F); }});
    f.push_back({"data.map_G",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.data.map_G = keyed(k, [&] { return parse_appearance(v); });
                 },
                 [](const RunConfig& c) { return to_string(c.data.map_G); }});
    f.push_back(double_field("data.noise_F", [](auto& c) -> auto& { return c.data.noise_F; }));
    f.push_back(double_field("data.noise_G", [](auto& c) -> auto& { return c.data.noise_G; }));
    f.push_back(int_field("data.train_count", [](auto& c) -> auto& { return c.layout.train_count; }));
    f.push_back(int_field("data.test_count", [](auto& c) -> auto& { return c.layout.test_count; }));

    f.push_back(int_field("lmi.window", [](auto& c) -> auto& { return c.lmi.window; }));
    f.push_back(int_field("lmi.shift_steps", [](auto& c) -> auto& { return c.lmi.shift_steps; }));
    f.push_back(int_field("lmi.tiling_extent", [](auto& c) -> auto& { return c.lmi.tiling_extent; }));
    f.push_back({"lmi.estimator",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   if (v == "histogram") c.lmi.estimator.kind = EstimatorKind::histogram;
                   else if (v == "gaussian_kernel") c.lmi.estimator.kind = EstimatorKind::gaussian_kernel;
                   else throw ConfigError("invalid value '" + std::string(v) + "' for config key '" + std::string(k) + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.lmi.estimator.kind == EstimatorKind::histogram ? "histogram" : "gaussian_kernel");
                 }});
    f.push_back(int_field("lmi.bins", [](auto& c) -> auto& { return c.lmi.estimator.bins; }));
    f.push_back(double_field("lmi.bandwidth", [](auto& c) -> auto& { return c.lmi.estimator.bandwidth; }));
    f.push_back(double_field("lmi.range_min", [](auto& c) -> auto& { return c.lmi.estimator.range_min; }));
    f.push_back(double_field("lmi.range_max", [](auto& c) -> auto& { return c.lmi.estimator.range_max; }));
    f.push_back(double_field("lmi.degenerate_value", [](auto& c) -> auto& { return c.lmi.degenerate_value; }));

    f.push_back(double_field("schedule.sigma_min", [](auto& c) -> auto& { return c.schedule.sigma_min; }));
    f.push_back(double_field("schedule.sigma_max", [](auto& c) -> auto& { return c.schedule.sigma_max; }));
    f.push_back(double_field("schedule.horizon", [](auto& c) -> auto& { return c.schedule.horizon; }));
    f.push_back(int_field("schedule.num_steps", [](auto& c) -> auto& { return c.schedule.num_steps; }));

    f.push_back(int_field("model.base_width", [](auto& c) -> auto& { return c.model.base_width; }));
    f.push_back(int_field("model.depth", [](auto& c) -> auto& { return c.model.depth; }));
    f.push_back(int_field("model.time_embed_dim", [](auto& c) -> auto& { return c.model.time_embed_dim; }));
    f.push_back({"model.activation",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.model.activation = keyed(k, [&] { return parse_activation(v); });
                 },
                 [](const RunConfig& c) { return to_string(c.model.activation); }});

    f.push_back(int_field("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(int_field("train.iterations", [](auto& c) -> auto& { return c.train.iterations; }));
    f.push_back(double_field("train.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(double_field("train.beta1", [](auto& c) -> auto& { return c.train.beta1; }));
    f.push_back(double_field("train.beta2", [](auto& c) -> auto& { return c.train.beta2; }));
    f.push_back(double_field("train.adam_epsilon", [](auto& c) -> auto& { return c.train.adam_epsilon; }));
    f.push_back(int_field("train.checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(double_field("train.t_eps", [](auto& c) -> auto& { return c.train.t_eps; }));

    f.push_back({"translate.mode",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.translate.mode = keyed(k, [&] { return parse_translation_mode(v); });
                 },
                 [](const RunConfig& c) { return to_string(c.translate.mode); }});
    f.push_back({"translate.t0",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   if (v.empty()) c.translate.t0.reset();
                   else c.translate.t0 = parse_num<double>(k, v);
                 },
                 [](const RunConfig& c) { return c.translate.t0 ? fmt_double(*c.translate.t0) : std::string(); }});
    f.push_back(int_field("translate.keep_intermediates", [](auto& c) -> auto& { return c.translate.keep_intermediates; }));
    return f;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  field(key).set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) { return field(key).get(cfg); }

void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << render_config(cfg);
}

std::string env_var_name(std::string_view key) {
  std::string name = "MIDIFF_";
  for (char ch : key) name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return name;
}

void apply_env_overrides(RunConfig& cfg) {
  for (const auto& f : fields())
    if (const char* v = std::getenv(env_var_name(f.key).c_str())) f.set(cfg, f.key, trim(v));
}

void validate(const RunConfig& cfg) {
  try {
    if (cfg.threads < 0) throw std::invalid_argument("threads must be >= 0");
    cfg.data.validate();
    if (cfg.layout.train_count < 1 || cfg.layout.test_count < 0)
      throw std::invalid_argument("data counts out of range");
    cfg.train_config().validate();
    if (cfg.translate.keep_intermediates < 0) throw std::invalid_argument("keep_intermediates must be >= 0");
    if (cfg.translate.t0 && !(*cfg.translate.t0 > 0.0 && *cfg.translate.t0 <= 1.0))
      throw std::invalid_argument("translate.t0 must lie in (0, 1]");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace midiff
