#include "midiff/lmi.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "midiff/image_io.hpp"
#include "midiff/parallel.hpp"

namespace midiff {

namespace {

// Candidates that beat the incumbent by less than this are ties.
constexpr double kTieTolerance = 1e-12;

double clamp_sample(double v, const EstimatorConfig& est, std::size_t& clamped) {
  if (v < est.range_min) {
    ++clamped;
    return est.range_min;
  }
  if (v > est.range_max) {
    ++clamped;
    return est.range_max;
  }
  if (std::isnan(v)) {
    ++clamped;
    return est.range_min;
  }
  return v;
}

int histogram_bin(double v, const EstimatorConfig& est) {
  const double u = (v - est.range_min) / (est.range_max - est.range_min);
  const int b = static_cast<int>(std::floor(u * est.bins));
  return std::clamp(b, 0, est.bins - 1);
}

void kernel_weights(double v, const EstimatorConfig& est, double* out) {
  const double width = (est.range_max - est.range_min) / est.bins;
  const double inv = 1.0 / (2.0 * est.bandwidth * est.bandwidth);
  double total = 0.0;
  for (int g = 0; g < est.bins; ++g) {
    const double center = est.range_min + (g + 0.5) * width;
    const double d = center - v;
    out[g] = std::exp(-d * d * inv);
    total += out[g];
  }
  // Each sample carries unit mass; a bandwidth so narrow that every weight
  // underflows degrades to plain binning.
  if (total > 0.0) {
    for (int g = 0; g < est.bins; ++g) out[g] /= total;
  } else {
    out[histogram_bin(v, est)] = 1.0;
  }
}

bool is_flat(std::span<const double> samples) {
  return std::all_of(samples.begin(), samples.end(),
                     [first = samples.front()](double v) { return v == first; });
}

void check_window_fits(const Image& img, int window) {
  if (window < 1) throw std::invalid_argument("window must be positive");
  if (window > img.height() || window > img.width())
    throw std::invalid_argument("window exceeds image extent");
}

// Normalizes a non-negative table to unit mass in place.
void normalize(std::vector<double>& table) {
  const double total = std::accumulate(table.begin(), table.end(), 0.0);
  for (double& v : table) v /= total;
}

struct Candidate {
  double value;
  std::size_t index;
};

// Offsets arrive in tie-break order, so a later one wins only when strictly
// better beyond the tie tolerance.
void consider(Candidate& best, double value, std::size_t index) {
  if (value > best.value + kTieTolerance) best = {value, index};
}

}  // namespace

void EstimatorConfig::validate() const {
  if (bins < 2 || bins > 256) throw std::invalid_argument("estimator bins must lie in [2, 256]");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("estimator bandwidth must be > 0");
  if (!(range_max > range_min)) throw std::invalid_argument("estimator value range is empty");
}

void LMIConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument("LMI window must be odd and >= 3");
  if (shift_steps < 1) throw std::invalid_argument("LMI shift_steps must be >= 1");
  if (tiling_extent < 1) throw std::invalid_argument("LMI tiling_extent must be >= 1");
  estimator.validate();
}

int LMIConfig::shift_increment() const {
  const int inc = static_cast<int>(std::lround(static_cast<double>(window) / shift_steps));
  return std::max(1, inc);
}

std::vector<Offset> LMIConfig::offsets() const {
  const int inc = shift_increment();
  std::vector<int> axis(static_cast<std::size_t>(shift_steps));
  for (int j = 0; j < shift_steps; ++j) axis[static_cast<std::size_t>(j)] = (j - shift_steps / 2) * inc;
  std::vector<Offset> out;
  out.reserve(axis.size() * axis.size());
  for (int dy : axis)
    for (int dx : axis) out.push_back({dy, dx});
  std::stable_sort(out.begin(), out.end(), [](const Offset& a, const Offset& b) {
    return std::abs(a.dy) + std::abs(a.dx) < std::abs(b.dy) + std::abs(b.dx);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Extension operators

PeriodicExtension::PeriodicExtension(Patch tile, int tiling_extent)
    : tile_(std::move(tile)), extent_(tiling_extent) {
  if (extent_ < 1) throw std::invalid_argument("tiling extent must be >= 1");
}

bool PeriodicExtension::covered(int v) const {
  const int lo = -(extent_ / 2) * tile_.size;
  const int hi = (extent_ - extent_ / 2) * tile_.size;
  return v >= lo && v < hi;
}

double PeriodicExtension::at(int y, int x) const {
  if (!covered(y) || !covered(x)) return 0.0;
  return tile_(wrap_index(y, tile_.size), wrap_index(x, tile_.size));
}

Patch PeriodicExtension::window(int y, int x) const {
  Patch out{tile_.size, std::vector<double>(tile_.values.size())};
  for (int r = 0; r < tile_.size; ++r)
    for (int c = 0; c < tile_.size; ++c)
      out.values[static_cast<std::size_t>(r * tile_.size + c)] = at(y + r, x + c);
  return out;
}

Patch extract_window(const Image& img, Pixel center, int window) {
  check_window_fits(img, window);
  if (center.row < 0 || center.row >= img.height() || center.col < 0 || center.col >= img.width())
    throw std::out_of_range("pixel outside image");
  Patch out{window, std::vector<double>(static_cast<std::size_t>(window * window))};
  const int top = center.row - window / 2;
  const int left = center.col - window / 2;
  for (int r = 0; r < window; ++r)
    for (int c = 0; c < window; ++c)
      out.values[static_cast<std::size_t>(r * window + c)] = img.wrapped(top + r, left + c);
  return out;
}

PeriodicExtension periodic_extension(const Image& x, Pixel center, const LMIConfig& cfg) {
  return PeriodicExtension(extract_window(x, center, cfg.window), cfg.tiling_extent);
}

std::vector<ShiftedPatch> sliding_extension(const Image& y, Pixel center, const LMIConfig& cfg) {
  if (cfg.shift_steps < 1) throw std::invalid_argument("LMI shift_steps must be >= 1");
  check_window_fits(y, cfg.window);
  std::vector<ShiftedPatch> out;
  for (const Offset& o : cfg.offsets()) {
    const Pixel shifted{wrap_index(center.row + o.dy, y.height()),
                        wrap_index(center.col + o.dx, y.width())};
    out.push_back({o, extract_window(y, shifted, cfg.window)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density estimation and MI

JointDensity::JointDensity(int bins, std::vector<double> probabilities, std::size_t clamped)
    : bins_(bins), p_(std::move(probabilities)), clamped_(clamped) {
  if (bins_ < 1 || p_.size() != static_cast<std::size_t>(bins_ * bins_))
    throw std::invalid_argument("joint table size does not match bin count");
}

std::vector<double> JointDensity::marginal_first() const {
  std::vector<double> m(static_cast<std::size_t>(bins_), 0.0);
  for (int a = 0; a < bins_; ++a)
    for (int b = 0; b < bins_; ++b) m[static_cast<std::size_t>(a)] += (*this)(a, b);
  return m;
}

std::vector<double> JointDensity::marginal_second() const {
  std::vector<double> m(static_cast<std::size_t>(bins_), 0.0);
  for (int a = 0; a < bins_; ++a)
    for (int b = 0; b < bins_; ++b) m[static_cast<std::size_t>(b)] += (*this)(a, b);
  return m;
}

JointDensity JointDensity::transposed() const {
  std::vector<double> t(p_.size());
  for (int a = 0; a < bins_; ++a)
    for (int b = 0; b < bins_; ++b) t[static_cast<std::size_t>(b * bins_ + a)] = (*this)(a, b);
  return JointDensity(bins_, std::move(t), clamped_);
}

JointDensity estimate_joint_density(std::span<const double> a, std::span<const double> b,
                                    const EstimatorConfig& est) {
  est.validate();
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample vectors");
  if (a.size() != b.size()) throw std::invalid_argument("sample vectors differ in length");

  const int bins = est.bins;
  std::vector<double> table(static_cast<std::size_t>(bins * bins), 0.0);
  std::size_t clamped = 0;

  if (est.kind == EstimatorKind::histogram) {
    std::vector<int> counts(table.size(), 0);
    for (std::size_t n = 0; n < a.size(); ++n) {
      const int ia = histogram_bin(clamp_sample(a[n], est, clamped), est);
      const int ib = histogram_bin(clamp_sample(b[n], est, clamped), est);
      ++counts[static_cast<std::size_t>(ia * bins + ib)];
    }
    const double total = static_cast<double>(a.size());
    for (std::size_t c = 0; c < table.size(); ++c) table[c] = counts[c] / total;
  } else {
    std::vector<double> wa(static_cast<std::size_t>(bins)), wb(static_cast<std::size_t>(bins));
    for (std::size_t n = 0; n < a.size(); ++n) {
      kernel_weights(clamp_sample(a[n], est, clamped), est, wa.data());
      kernel_weights(clamp_sample(b[n], est, clamped), est, wb.data());
      for (int g = 0; g < bins; ++g)
        for (int h = 0; h < bins; ++h)
          table[static_cast<std::size_t>(g * bins + h)] += wa[static_cast<std::size_t>(g)] * wb[static_cast<std::size_t>(h)];
    }
    normalize(table);
  }
  return JointDensity(bins, std::move(table), clamped);
}

double mi_from_table(std::span<const double> p, int bins) {
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("joint density does not sum to 1");

  std::array<double, 256> stack_pa{}, stack_pb{};
  std::vector<double> heap_pa, heap_pb;
  double* pa = stack_pa.data();
  double* pb = stack_pb.data();
  if (bins > 256) {
    heap_pa.assign(static_cast<std::size_t>(bins), 0.0);
    heap_pb.assign(static_cast<std::size_t>(bins), 0.0);
    pa = heap_pa.data();
    pb = heap_pb.data();
  }
  for (int a = 0; a < bins; ++a)
    for (int b = 0; b < bins; ++b) {
      const double v = p[static_cast<std::size_t>(a * bins + b)];
      pa[a] += v;
      pb[b] += v;
    }

  double mi = 0.0;
  for (int a = 0; a < bins; ++a)
    for (int b = 0; b < bins; ++b) {
      const double v = p[static_cast<std::size_t>(a * bins + b)];
      if (v > 0.0) mi += v * std::log(v / (pa[a] * pb[b]));
    }
  return std::max(0.0, mi);
}

double mi_from_density(const JointDensity& joint) { return mi_from_table(joint.table(), joint.bins()); }

// ---------------------------------------------------------------------------
// Fast LMI map

namespace {

// Per-pixel flags: whether the window centred there has zero variance.
std::vector<std::uint8_t> flat_windows(const Image& img, int window) {
  std::vector<std::uint8_t> flat(img.size());
  const int half = window / 2;
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c) {
      const double first = img.wrapped(r - half, c - half);
      bool same = true;
      for (int u = 0; u < window && same; ++u)
        for (int v = 0; v < window && same; ++v) same = img.wrapped(r - half + u, c - half + v) == first;
      flat[static_cast<std::size_t>(r * img.width() + c)] = same ? 1 : 0;
    }
  return flat;
}

// Integer field with a periodic border of `pad` cells on every side, so that
// window reads need no index wrapping.
class PaddedCodes {
 public:
  PaddedCodes(const std::vector<int>& codes, int height, int width, int pad)
      : pad_(pad), stride_(width + 2 * pad) {
    if (codes.empty()) return;
    data_.resize(static_cast<std::size_t>((height + 2 * pad) * stride_));
    for (int r = -pad; r < height + pad; ++r)
      for (int c = -pad; c < width + pad; ++c)
        data_[static_cast<std::size_t>((r + pad) * stride_ + c + pad)] =
            codes[static_cast<std::size_t>(wrap_index(r, height) * width + wrap_index(c, width))];
  }

  const int* row(int r) const { return data_.data() + static_cast<std::ptrdiff_t>((r + pad_) * stride_ + pad_); }
  int at(int r, int c) const { return row(r)[c]; }

 private:
  int pad_;
  int stride_;
  std::vector<int> data_;
};

struct SampleCodes {
  std::vector<int> bins;         // histogram mode
  std::vector<double> weights;   // kernel mode, bins per pixel
  std::size_t clamped = 0;
};

SampleCodes encode_samples(const Image& img, const EstimatorConfig& est) {
  SampleCodes out;
  if (est.kind == EstimatorKind::histogram) {
    out.bins.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
      out.bins[i] = histogram_bin(clamp_sample(img.values()[i], est, out.clamped), est);
  } else {
    out.weights.resize(img.size() * static_cast<std::size_t>(est.bins));
    for (std::size_t i = 0; i < img.size(); ++i)
      kernel_weights(clamp_sample(img.values()[i], est, out.clamped), est,
                     out.weights.data() + i * static_cast<std::size_t>(est.bins));
  }
  return out;
}

}  // namespace

GuideCache::GuideCache(const Image& guide, const LMIConfig& cfg) : guide_(guide), cfg_(cfg) {
  cfg_.validate();
  check_window_fits(guide_, cfg_.window);
  SampleCodes codes = encode_samples(guide_, cfg_.estimator);
  bin_index_ = std::move(codes.bins);
  kernel_weights_ = std::move(codes.weights);
  clamped_ = codes.clamped;
  flat_window_ = flat_windows(guide_, cfg_.window);
}

LMIMap lmi_map(const Image& guide, const Image& probe, const LMIConfig& cfg) {
  require_same_shape(guide, probe, "lmi_map");
  return lmi_map(GuideCache(guide, cfg), probe);
}

LMIMap lmi_map(const GuideCache& cache, const Image& probe) {
  const Image& guide = cache.guide_;
  const LMIConfig& cfg = cache.cfg_;
  require_same_shape(guide, probe, "lmi_map");

  const int height = guide.height();
  const int width = guide.width();
  const int window = cfg.window;
  const int half = window / 2;
  const int bins = cfg.estimator.bins;
  const bool histogram = cfg.estimator.kind == EstimatorKind::histogram;
  const std::vector<Offset> offsets = cfg.offsets();
  const std::size_t cells = static_cast<std::size_t>(bins * bins);

  const SampleCodes probe_codes = encode_samples(probe, cfg.estimator);
  const std::vector<std::uint8_t> probe_flat = flat_windows(probe, window);

  LMIMap out;
  out.values = Image(height, width, 0.0);
  out.argmax_shift.assign(guide.size(), Offset{});
  out.clamped_samples = cache.clamped_ + probe_codes.clamped;

  std::vector<double> log_int(static_cast<std::size_t>(window * window) + 1, 0.0);
  for (std::size_t i = 1; i < log_int.size(); ++i) log_int[i] = std::log(static_cast<double>(i));
  const int n_samples = window * window;
  const double log_n = log_int[static_cast<std::size_t>(n_samples)];
  int reach = 0;
  for (const Offset& o : offsets) reach = std::max({reach, std::abs(o.dy), std::abs(o.dx)});
  const PaddedCodes gpad(histogram ? cache.bin_index_ : std::vector<int>{}, height, width, half + reach);
  const PaddedCodes ppad(histogram ? probe_codes.bins : std::vector<int>{}, height, width, half + reach);

  parallel_for(static_cast<std::size_t>(height), [&](std::size_t row_begin, std::size_t row_end) {
    std::vector<int> counts(cells, 0);
    std::vector<int> guide_count(static_cast<std::size_t>(bins), 0);
    std::vector<int> probe_count(static_cast<std::size_t>(bins), 0);
    std::vector<double> table(cells);
    for (int r = static_cast<int>(row_begin); r < static_cast<int>(row_end); ++r) {
      for (int c = 0; c < width; ++c) {
        const std::size_t pixel = static_cast<std::size_t>(r * width + c);
        bool all_probe_flat = true;
        for (const Offset& o : offsets)
          all_probe_flat = all_probe_flat &&
                           probe_flat[static_cast<std::size_t>(wrap_index(r + o.dy, height) * width +
                                                               wrap_index(c + o.dx, width))] != 0;
        if (cache.flat_window_[pixel] || all_probe_flat) {
          out.values(r, c) = cfg.degenerate_value;
          continue;
        }

        Candidate best{-std::numeric_limits<double>::infinity(), 0};
        if (histogram) {
          // Guide-side marginal is shared by every offset of this pixel.
          std::fill(guide_count.begin(), guide_count.end(), 0);
          for (int u = 0; u < window; ++u)
            for (int v = 0; v < window; ++v) ++guide_count[static_cast<std::size_t>(gpad.at(r - half + u, c - half + v))];
          for (std::size_t k = 0; k < offsets.size(); ++k) {
            const Offset& o = offsets[k];
            for (int u = 0; u < window; ++u) {
              const int* ga = gpad.row(r - half + u) + (c - half);
              const int* pb = ppad.row(r + o.dy - half + u) + (c + o.dx - half);
              for (int v = 0; v < window; ++v) {
                ++counts[static_cast<std::size_t>(ga[v] * bins + pb[v])];
                ++probe_count[static_cast<std::size_t>(pb[v])];
              }
            }
            double acc = 0.0;
            for (int a = 0; a < bins; ++a) {
              const int ca = guide_count[static_cast<std::size_t>(a)];
              if (ca == 0) continue;
              const double la = log_int[static_cast<std::size_t>(ca)];
              const int* row = counts.data() + a * bins;
              // Empty cells add an exact zero (log_int[0] is 0), so no branch.
              for (int b = 0; b < bins; ++b) {
                const int cnt = row[b];
                acc += cnt * (log_int[static_cast<std::size_t>(cnt)] - la -
                              log_int[static_cast<std::size_t>(probe_count[static_cast<std::size_t>(b)])] + log_n);
              }
            }
            consider(best, std::max(0.0, acc / n_samples), k);
            for (int u = 0; u < window; ++u) {
              const int* ga = gpad.row(r - half + u) + (c - half);
              const int* pb = ppad.row(r + o.dy - half + u) + (c + o.dx - half);
              for (int v = 0; v < window; ++v) {
                counts[static_cast<std::size_t>(ga[v] * bins + pb[v])] = 0;
                probe_count[static_cast<std::size_t>(pb[v])] = 0;
              }
            }
          }
        } else {
          for (std::size_t k = 0; k < offsets.size(); ++k) {
            const Offset& o = offsets[k];
            std::fill(table.begin(), table.end(), 0.0);
            for (int u = 0; u < window; ++u) {
              const int gr = wrap_index(r - half + u, height);
              const int pr = wrap_index(r + o.dy - half + u, height);
              for (int v = 0; v < window; ++v) {
                const int gc = wrap_index(c - half + v, width);
                const int pc = wrap_index(c + o.dx - half + v, width);
                const double* wa = cache.kernel_weights_.data() + static_cast<std::size_t>(gr * width + gc) * static_cast<std::size_t>(bins);
                const double* wb = probe_codes.weights.data() + static_cast<std::size_t>(pr * width + pc) * static_cast<std::size_t>(bins);
                for (int g = 0; g < bins; ++g)
                  for (int h = 0; h < bins; ++h) table[static_cast<std::size_t>(g * bins + h)] += wa[g] * wb[h];
              }
            }
            normalize(table);
            consider(best, mi_from_table(table, bins), k);
          }
        }
        out.values(r, c) = best.value;
        out.argmax_shift[pixel] = offsets[best.index];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

LMIMap lmi_map_bruteforce(const Image& guide, const Image& probe, const LMIConfig& cfg,
                          bool allow_large) {
  require_same_shape(guide, probe, "lmi_map_bruteforce");
  cfg.validate();
  if (!allow_large && (guide.height() > 64 || guide.width() > 64))
    throw std::invalid_argument("lmi_map_bruteforce: image larger than 64x64 (set allow_large)");
  check_window_fits(guide, cfg.window);

  LMIMap out;
  out.values = Image(guide.height(), guide.width(), 0.0);
  out.argmax_shift.assign(guide.size(), Offset{});

  for (int r = 0; r < guide.height(); ++r) {
    for (int c = 0; c < guide.width(); ++c) {
      const PeriodicExtension guide_ext = periodic_extension(guide, {r, c}, cfg);
      const std::vector<ShiftedPatch> probes = sliding_extension(probe, {r, c}, cfg);
      const Patch& guide_patch = guide_ext.tile();

      const bool guide_flat = is_flat(guide_patch.values);
      const bool probes_flat = std::all_of(probes.begin(), probes.end(),
                                           [](const ShiftedPatch& s) { return is_flat(s.patch.values); });
      if (guide_flat || probes_flat) {
        out.values(r, c) = cfg.degenerate_value;
        continue;
      }

      Candidate best{-std::numeric_limits<double>::infinity(), 0};
      for (std::size_t k = 0; k < probes.size(); ++k) {
        const JointDensity joint =
            estimate_joint_density(guide_patch.values, probes[k].patch.values, cfg.estimator);
        consider(best, mi_from_density(joint), k);
      }
      out.values(r, c) = best.value;
      out.argmax_shift[static_cast<std::size_t>(r * guide.width() + c)] = probes[best.index].offset;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated LMI file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_lmi_raw(const LMIMap& map, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("LMI1", 4);
  put_u32(os, static_cast<std::uint32_t>(map.values.height()));
  put_u32(os, static_cast<std::uint32_t>(map.values.width()));
  put_u32(os, 0);
  for (double v : map.values.values()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Image read_lmi_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "LMI1") throw std::runtime_error("bad LMI magic");
  const std::uint32_t height = get_u32(is);
  const std::uint32_t width = get_u32(is);
  get_u32(is);
  Image out(static_cast<int>(height), static_cast<int>(width));
  for (double& v : out.values()) v = std::bit_cast<float>(get_u32(is));
  return out;
}

void write_lmi_pgm(const LMIMap& map, const std::filesystem::path& path) {
  const auto v = map.values.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  Image scaled(map.values.height(), map.values.width(), 0.0);
  if (lo != v.end() && *hi > *lo) {
    for (std::size_t i = 0; i < v.size(); ++i) scaled.values()[i] = (v[i] - *lo) / (*hi - *lo);
  }
  save_image(scaled, path);
}

}  // namespace midiff
