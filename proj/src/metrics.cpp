#include "midiff/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace midiff {

namespace {

constexpr double kScale = 255.0;
constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable Gaussian filter of a row-major h x w field.
std::vector<double> filter_valid(const std::vector<double>& f, int h, int w) {
  static const auto taps = gaussian_taps();
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * f[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw std::invalid_argument("mse: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = kScale * (a.values()[i] - b.values()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b, double data_range) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(data_range * data_range / m);
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const int h = a.height();
  const int w = a.width();
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = kScale * a.values()[i];
    y[i] = kScale * b.values()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w);
  const auto my = filter_valid(y, h, w);
  const auto mxx = filter_valid(xx, h, w);
  const auto myy = filter_valid(yy, h, w);
  const auto mxy = filter_valid(xy, h, w);
  const double c1 = (0.01 * kScale) * (0.01 * kScale);
  const double c2 = (0.03 * kScale) * (0.03 * kScale);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

int intensity_bin(double v, int bins) {
  const double f = std::floor(std::clamp(v, 0.0, 1.0) * bins);
  return std::min(bins - 1, static_cast<int>(f));
}

double plugin_entropy(const Image& a, int bins) {
  if (a.empty()) throw std::invalid_argument("plugin_entropy: empty image");
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (double v : a.values()) counts[intensity_bin(v, bins)] += 1.0;
  const double n = static_cast<double>(a.size());
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

double global_mi(const Image& a, const Image& b, int bins) {
  require_same_shape(a, b, "global_mi");
  if (a.empty()) throw std::invalid_argument("global_mi: empty image");
  if (bins < 2) throw std::invalid_argument("global_mi: bins must be >= 2");
  const auto nb = static_cast<std::size_t>(bins);
  std::vector<double> joint(nb * nb, 0.0), ca(nb, 0.0), cb(nb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ia = intensity_bin(a.values()[i], bins);
    const int ib = intensity_bin(b.values()[i], bins);
    joint[ia * nb + ib] += 1.0;
    ca[ia] += 1.0;
    cb[ib] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  // Written as log p - log pa - log pb so that a == b reproduces plugin_entropy
  // term by term.
  double mi = 0.0;
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const double c = joint[i * nb + j];
      if (c == 0.0) continue;
      const double p = c / n;
      mi += p * (std::log(p) - std::log(ca[i] / n) - std::log(cb[j] / n));
    }
  return std::max(0.0, mi);
}

MetricsReport evaluate_run(const std::vector<Image>& pred, const std::vector<Image>& guide,
                           const std::vector<Image>& target, const std::vector<std::string>& pair_ids) {
  if (pred.empty()) throw std::invalid_argument("evaluate_run: empty set");
  if (guide.size() != pred.size() || target.size() != pred.size())
    throw std::invalid_argument("evaluate_run: count mismatch");
  if (!pair_ids.empty() && pair_ids.size() != pred.size())
    throw std::invalid_argument("evaluate_run: pair id count mismatch");

  MetricsReport report;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    MetricsRow r;
    r.pair_id = pair_ids.empty() ? std::to_string(i) : pair_ids[i];
    r.ssim_tar = ssim(pred[i], target[i]);
    r.ssim_src = ssim(pred[i], guide[i]);
    r.mse = mse(pred[i], target[i]);
    r.psnr = psnr(pred[i], target[i]);
    r.mi = global_mi(pred[i], target[i]);
    report.rows.push_back(std::move(r));
  }

  const double n = static_cast<double>(report.rows.size());
  auto column = [&](double MetricsRow::*field, MetricsRow& m, MetricsRow& s) {
    double sum = 0.0;
    for (const auto& r : report.rows) sum += r.*field;
    const double mu = sum / n;
    double var = 0.0;
    for (const auto& r : report.rows) var += (r.*field - mu) * (r.*field - mu);
    m.*field = mu;
    s.*field = std::isfinite(mu) ? std::sqrt(var / n) : std::numeric_limits<double>::quiet_NaN();
  };
  report.mean.pair_id = "mean";
  report.std.pair_id = "std";
  for (auto f : {&MetricsRow::ssim_tar, &MetricsRow::ssim_src, &MetricsRow::mse, &MetricsRow::psnr, &MetricsRow::mi})
    column(f, report.mean, report.std);
  return report;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.precision(10);
  out << "pair_id,ssim_tar,ssim_src,mse,psnr,mi\n";
  auto row = [&](const MetricsRow& r) {
    out << r.pair_id << ',' << r.ssim_tar << ',' << r.ssim_src << ',' << r.mse << ',' << r.psnr << ',' << r.mi << '\n';
  };
  for (const auto& r : report.rows) row(r);
  row(report.mean);
  row(report.std);
}

}  // namespace midiff
