#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "midiff/image.hpp"

namespace midiff {

// All metrics work on the 8-bit intensity scale: inputs in [0, 1] are
// multiplied by 255 (no rounding).

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

double mse(const Image& a, const Image& b);

/// 10 log10(range^2 / mse); identical images give kPsnrInfinite.
double psnr(const Image& a, const Image& b, double data_range = 255.0);

/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over windows
/// fully inside the image. Both sides must be at least 11 pixels.
double ssim(const Image& a, const Image& b);

/// Bin index of a [0, 1] intensity on a `bins`-level grid (clamped).
int intensity_bin(double v, int bins);

/// Plug-in entropy (nats) of the `bins`-level intensity histogram.
double plugin_entropy(const Image& a, int bins = 64);

/// Plug-in mutual information (nats) of the joint `bins` x `bins` histogram.
double global_mi(const Image& a, const Image& b, int bins = 64);

struct MetricsRow {
  std::string pair_id;
  double ssim_tar = 0.0;  // ssim(prediction, target)
  double ssim_src = 0.0;  // ssim(prediction, guide)
  double mse = 0.0;       // against target
  double psnr = 0.0;      // against target
  double mi = 0.0;        // against target
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  MetricsRow mean;  // pair_id "mean"
  MetricsRow std;   // pair_id "std", population standard deviation
};

/// Per-pair metrics for aligned (prediction, guide, target) triples.
MetricsReport evaluate_run(const std::vector<Image>& pred, const std::vector<Image>& guide,
                           const std::vector<Image>& target, const std::vector<std::string>& pair_ids = {});

/// Header pair_id,ssim_tar,ssim_src,mse,psnr,mi, one row per pair, then the
/// mean and std rows.
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace midiff
