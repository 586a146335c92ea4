#include "midiff/synth_data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "midiff/image_io.hpp"

namespace midiff {

std::string to_string(Structure s) {
  switch (s) {
    case Structure::blobs: return "blobs";
    case Structure::stripes: return "stripes";
    case Structure::voronoi: return "voronoi";
  }
  return "?";
}

Structure parse_structure(std::string_view name) {
  if (name == "blobs") return Structure::blobs;
  if (name == "stripes") return Structure::stripes;
  if (name == "voronoi" || name == "voronoi-cells") return Structure::voronoi;
  throw std::invalid_argument("unknown structure '" + std::string(name) + "'");
}

double AppearanceMap::apply(double v) const {
  switch (kind) {
    case Kind::identity: return v;
    case Kind::invert: return 1.0 - v;
    case Kind::gamma: return std::pow(std::clamp(v, 0.0, 1.0), gamma);
    case Kind::two_level: return v < 0.5 ? low : high;
  }
  return v;
}

void AppearanceMap::validate() const {
  if (kind == Kind::gamma && !(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  if (kind == Kind::two_level && !(low >= 0.0 && low <= 1.0 && high >= 0.0 && high <= 1.0))
    throw std::invalid_argument("two_level levels must lie in [0, 1]");
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string to_string(const AppearanceMap& m) {
  switch (m.kind) {
    case AppearanceMap::Kind::identity: return "identity";
    case AppearanceMap::Kind::invert: return "invert";
    case AppearanceMap::Kind::gamma: return "gamma(" + shortest(m.gamma) + ")";
    case AppearanceMap::Kind::two_level: return "two_level(" + shortest(m.low) + "," + shortest(m.high) + ")";
  }
  return "?";
}

namespace {

double parse_number(std::string_view s, std::string_view context) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("bad number in appearance map '" + std::string(context) + "'");
  return v;
}

}  // namespace

AppearanceMap parse_appearance(std::string_view text) {
  if (text == "identity") return AppearanceMap::identity();
  if (text == "invert") return AppearanceMap::invert();
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')')
    throw std::invalid_argument("unknown appearance map '" + std::string(text) + "'");
  const auto head = text.substr(0, open);
  const auto args = text.substr(open + 1, text.size() - open - 2);
  AppearanceMap m;
  if (head == "gamma") {
    m = AppearanceMap::power(parse_number(args, text));
  } else if (head == "two_level" || head == "two-level") {
    const auto comma = args.find(',');
    if (comma == std::string_view::npos) throw std::invalid_argument("two_level needs two levels");
    m = AppearanceMap::two_level(parse_number(args.substr(0, comma), text), parse_number(args.substr(comma + 1), text));
  } else {
    throw std::invalid_argument("unknown appearance map '" + std::string(text) + "'");
  }
  m.validate();
  return m;
}

void ModalityPairSpec::validate() const {
  if (size < 16) throw std::invalid_argument("pair size must be >= 16");
  map_F.validate();
  map_G.validate();
  if (map_F == map_G) throw std::invalid_argument("the two appearance maps must differ");
  if (noise_F < 0.0 || noise_G < 0.0) throw std::invalid_argument("texture noise must be >= 0");
}

namespace {

double periodic_delta(double a, double b, int n) {
  double d = std::fabs(a - b);
  return std::min(d, n - d);
}

Image normalize(Image img, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(img.values().begin(), img.values().end());
  const double a = *mn;
  const double span = *mx - *mn;
  for (double& v : img.values()) v = span > 0.0 ? lo + (hi - lo) * (v - a) / span : 0.5 * (lo + hi);
  return img;
}

Image blobs(int n, Rng& rng) {
  const int count = 4 + static_cast<int>(rng() % 5);
  Image f(n, n, 0.0);
  for (int b = 0; b < count; ++b) {
    const double cy = uniform(rng, 0.0, n);
    const double cx = uniform(rng, 0.0, n);
    const double r = uniform(rng, 0.08, 0.2) * n;
    const double amp = uniform(rng, 0.5, 1.0) * (b % 2 == 0 ? 1.0 : -0.6);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dy = periodic_delta(y, cy, n);
        const double dx = periodic_delta(x, cx, n);
        f(y, x) += amp * std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
      }
  }
  return normalize(std::move(f), 0.1, 0.9);
}

Image stripes(int n, Rng& rng) {
  // Integer wave numbers keep the pattern periodic over the image.
  const int ky = static_cast<int>(rng() % 4);
  const int kx = 1 + static_cast<int>(rng() % 4);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  Image f(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      f(y, x) = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * (ky * y + kx * x) / n + phase);
  return f;
}

Image voronoi(int n, Rng& rng) {
  const int count = 6 + static_cast<int>(rng() % 7);
  std::vector<double> sy(count), sx(count), level(count);
  for (int i = 0; i < count; ++i) {
    sy[i] = uniform(rng, 0.0, n);
    sx[i] = uniform(rng, 0.0, n);
    level[i] = uniform(rng, 0.1, 0.9);
  }
  Image f(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double best = 1e300;
      for (int i = 0; i < count; ++i) {
        const double dy = periodic_delta(y, sy[i], n);
        const double dx = periodic_delta(x, sx[i], n);
        const double d = dy * dy + dx * dx;
        if (d < best) {
          best = d;
          f(y, x) = level[i];
        }
      }
    }
  return f;
}

Image render(const Image& base, const AppearanceMap& map, double noise, Rng& rng) {
  Image out(base.height(), base.width());
  for (std::size_t i = 0; i < base.size(); ++i)
    out.values()[i] = std::clamp(map.apply(base.values()[i]) + noise * standard_normal(rng), 0.0, 1.0);
  return out;
}

}  // namespace

Image make_structure(Structure structure, int size, std::uint64_t structure_seed) {
  if (size < 1) throw std::invalid_argument("structure size must be positive");
  Rng rng = make_stream(structure_seed, 1);
  switch (structure) {
    case Structure::blobs: return blobs(size, rng);
    case Structure::stripes: return stripes(size, rng);
    case Structure::voronoi: return voronoi(size, rng);
  }
  throw std::invalid_argument("unknown structure");
}

PairDataset make_pair_dataset(const ModalityPairSpec& spec, int n, int first_index) {
  spec.validate();
  if (n < 0) throw std::invalid_argument("pair count must be >= 0");
  PairDataset ds;
  for (int i = first_index; i < first_index + n; ++i) {
    const std::uint64_t seed = make_stream(spec.seed, static_cast<std::uint64_t>(i))();
    const Image base = make_structure(spec.structure, spec.size, seed);
    Rng noise_rng = make_stream(seed, 2);
    ds.F.push_back(render(base, spec.map_F, spec.noise_F, noise_rng));
    ds.G.push_back(render(base, spec.map_G, spec.noise_G, noise_rng));
    ds.structure_seeds.push_back(seed);
  }
  return ds;
}

void write_dataset(const ModalityPairSpec& spec, const DatasetLayout& layout, const std::filesystem::path& dir) {
  if (layout.train_count < 1 || layout.test_count < 0) throw std::invalid_argument("dataset counts out of range");
  namespace fs = std::filesystem;
  for (const char* sub : {"train_F", "test_G", "test_F"}) fs::create_directories(dir / sub);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "filename,structure_seed,modality\n";

  auto name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d.pgm", i);
    return std::string(buf);
  };
  const PairDataset train = make_pair_dataset(spec, layout.train_count, 0);
  for (int i = 0; i < layout.train_count; ++i) {
    const std::string rel = "train_F/" + name(i);
    save_image(train.F[i], dir / rel);
    manifest << rel << ',' << train.structure_seeds[i] << ",F\n";
  }
  const PairDataset test = make_pair_dataset(spec, layout.test_count, layout.train_count);
  for (int i = 0; i < layout.test_count; ++i) {
    const std::string g = "test_G/" + name(i);
    const std::string f = "test_F/" + name(i);
    save_image(test.G[i], dir / g);
    save_image(test.F[i], dir / f);
    manifest << g << ',' << test.structure_seeds[i] << ",G\n";
    manifest << f << ',' << test.structure_seeds[i] << ",F\n";
  }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".png")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace midiff
