#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "midiff/image.hpp"

namespace midiff {

enum class EstimatorKind { histogram, gaussian_kernel };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::histogram;
  int bins = 8;
  double bandwidth = 0.05;  // kernel mode only
  double range_min = 0.0;
  double range_max = 1.0;

  void validate() const;
};

struct Offset {
  int dy = 0;
  int dx = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

struct LMIConfig {
  int window = 5;         // side length of the local window, odd
  int shift_steps = 5;    // sliding offsets per axis
  int tiling_extent = 3;  // periodic tiling multiple of the guide window
  EstimatorConfig estimator;
  double degenerate_value = 0.0;

  void validate() const;

  /// Per-axis offset increment: window / shift_steps rounded to the nearest
  /// pixel, at least 1.
  int shift_increment() const;

  /// The shift_steps^2 offsets {0, inc, ..., (shift_steps-1)*inc}^2 shifted by
  /// (shift_steps/2)*inc so the search is centred on the pixel, in argmax
  /// tie-break order: ascending L1 norm, then row-major. The zero offset is
  /// always first.
  std::vector<Offset> offsets() const;
};

/// Square window of samples, row-major.
struct Patch {
  int size = 0;
  std::vector<double> values;

  double operator()(int r, int c) const { return values[static_cast<std::size_t>(r * size + c)]; }
  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Periodic extension of an image window: the window centred at a pixel,
/// repeated with period `window` over `tiling_extent` tiles per axis and zero
/// beyond. Coordinates are relative to the top-left of the base tile; the
/// covered range per axis is [-(K/2)*window, (K - K/2)*window).
class PeriodicExtension {
 public:
  PeriodicExtension(Patch tile, int tiling_extent);

  const Patch& tile() const { return tile_; }
  int tiling_extent() const { return extent_; }

  double at(int y, int x) const;

  /// Window of the extended function whose top-left sits at (y, x).
  Patch window(int y, int x) const;

 private:
  bool covered(int v) const;

  Patch tile_;
  int extent_;
};

/// Window of side `window` centred at `center` (rows center-window/2 ...), with
/// whole-image periodic wraparound at the borders.
Patch extract_window(const Image& img, Pixel center, int window);

PeriodicExtension periodic_extension(const Image& x, Pixel center, const LMIConfig& cfg);

struct ShiftedPatch {
  Offset offset;
  Patch patch;
};

/// The shifted windows of y around `center`, one per configured offset, in
/// tie-break order. Each patch holds exactly the samples selected by the
/// window indicator at that offset.
std::vector<ShiftedPatch> sliding_extension(const Image& y, Pixel center, const LMIConfig& cfg);

/// Discrete joint distribution on a bins x bins grid (row index = first
/// variable). Probabilities sum to one.
class JointDensity {
 public:
  JointDensity(int bins, std::vector<double> probabilities, std::size_t clamped = 0);

  int bins() const { return bins_; }
  double operator()(int a, int b) const { return p_[static_cast<std::size_t>(a * bins_ + b)]; }
  std::span<const double> table() const { return p_; }

  std::vector<double> marginal_first() const;
  std::vector<double> marginal_second() const;
  JointDensity transposed() const;

  /// Samples moved into the estimator range before estimation.
  std::size_t clamped_samples() const { return clamped_; }

 private:
  int bins_;
  std::vector<double> p_;
  std::size_t clamped_;
};

JointDensity estimate_joint_density(std::span<const double> a, std::span<const double> b,
                                    const EstimatorConfig& est);

/// Plug-in mutual information in nats. 0 log 0 is taken as 0.
double mi_from_density(const JointDensity& joint);

/// Plug-in mutual information of a row-major bins x bins probability table.
double mi_from_table(std::span<const double> p, int bins);

struct LMIMap {
  Image values;
  std::vector<Offset> argmax_shift;  // row-major, one per pixel
  std::size_t clamped_samples = 0;

  const Offset& shift(int row, int col) const {
    return argmax_shift[static_cast<std::size_t>(row * values.width() + col)];
  }
};

/// Precomputed guide side of the LMI computation: estimator bin indices (or
/// kernel weights) and zero-variance flags for every pixel's window. Reused
/// across many probes of the same guide.
class GuideCache {
 public:
  GuideCache(const Image& guide, const LMIConfig& cfg);

  const Image& guide() const { return guide_; }
  const LMIConfig& config() const { return cfg_; }

 private:
  friend LMIMap lmi_map(const GuideCache&, const Image&);

  Image guide_;
  LMIConfig cfg_;
  std::vector<int> bin_index_;          // histogram mode, per pixel
  std::vector<double> kernel_weights_;  // kernel mode, per pixel x bins
  std::vector<std::uint8_t> flat_window_;
  std::size_t clamped_ = 0;
};

LMIMap lmi_map(const Image& guide, const Image& probe, const LMIConfig& cfg);
LMIMap lmi_map(const GuideCache& guide, const Image& probe);

/// Naive per-pixel, per-offset evaluation through the explicit extension
/// operators. Refuses images above 64x64 unless allow_large is set.
LMIMap lmi_map_bruteforce(const Image& guide, const Image& probe, const LMIConfig& cfg,
                          bool allow_large = false);

/// Raw export: "LMI1", u32 height, u32 width, u32 reserved, then
/// height*width little-endian float32 values.
void write_lmi_raw(const LMIMap& map, const std::filesystem::path& path);
Image read_lmi_raw(const std::filesystem::path& path);

/// 8-bit PGM of the values, min-max scaled (a constant map renders as 0).
void write_lmi_pgm(const LMIMap& map, const std::filesystem::path& path);

}  // namespace midiff
