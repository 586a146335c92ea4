#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "midiff/image.hpp"
#include "midiff/random.hpp"

namespace midiff {

enum class Structure { blobs, stripes, voronoi };

std::string to_string(Structure s);
Structure parse_structure(std::string_view name);

/// Pointwise intensity remap applied to a structure field in [0, 1].
struct AppearanceMap {
  enum class Kind { identity, invert, gamma, two_level };

  Kind kind = Kind::identity;
  double gamma = 1.0;  // gamma only
  double low = 0.2;    // two_level: value below the 0.5 threshold
  double high = 0.8;   // two_level: value at or above it

  static AppearanceMap identity() { return {}; }
  static AppearanceMap invert() { return {Kind::invert}; }
  static AppearanceMap power(double g) { return {Kind::gamma, g}; }
  static AppearanceMap two_level(double lo, double hi) { return {Kind::two_level, 1.0, lo, hi}; }

  double apply(double v) const;
  void validate() const;

  friend bool operator==(const AppearanceMap&, const AppearanceMap&) = default;
};

/// Text form: identity, invert, gamma(2.0), two_level(0.2,0.8).
std::string to_string(const AppearanceMap& m);
AppearanceMap parse_appearance(std::string_view text);

struct ModalityPairSpec {
  Structure structure = Structure::blobs;
  int size = 32;
  AppearanceMap map_F = AppearanceMap::identity();
  AppearanceMap map_G = AppearanceMap::invert();
  double noise_F = 0.02;
  double noise_G = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Structure field in [0, 1], periodic across the borders.
Image make_structure(Structure structure, int size, std::uint64_t structure_seed);

struct PairDataset {
  std::vector<Image> G;
  std::vector<Image> F;
  std::vector<std::uint64_t> structure_seeds;
};

/// Pair i renders structure seed make_stream(spec.seed, i)() through both
/// appearance maps with independent texture noise, clamped to [0, 1].
PairDataset make_pair_dataset(const ModalityPairSpec& spec, int n, int first_index = 0);

/// Deterministic shuffled split; round(fraction * n) items go to the first part.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items, double train_fraction,
                                                        std::uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("split_dataset: empty input");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split_dataset: fraction must lie in (0, 1)");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_stream(seed, 0x5b17);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(items.size())));
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  return out;
}

struct DatasetLayout {
  int train_count = 256;
  int test_count = 64;
};

/// Writes train_F/, test_G/, test_F/ (*.pgm) and manifest.csv
/// (filename,structure_seed,modality). Training structures use pair indices
/// [0, train_count), test structures the following test_count indices.
void write_dataset(const ModalityPairSpec& spec, const DatasetLayout& layout, const std::filesystem::path& dir);

/// Image files (.pgm, .png) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace midiff
