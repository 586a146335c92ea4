#include "midiff/score_model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <stdexcept>

#include "midiff/parallel.hpp"
#include "midiff/random.hpp"

namespace midiff {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "silu";
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (input_channels != 2) throw std::invalid_argument("model input_channels must be 2");
  if (depth < 1) throw std::invalid_argument("model depth must be >= 1");
  if (base_width < 8) throw std::invalid_argument("model base_width must be >= 8");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw std::invalid_argument("model time_embed_dim must be even and >= 2");
}

std::size_t TensorSpec::size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// ParamSet

template <class T>
std::size_t ParamSet<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <class T>
const ParamTensor<T>* ParamSet<T>::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <class T>
const ParamTensor<T>& ParamSet<T>::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw std::out_of_range("no parameter tensor '" + std::string(name) + "'");
}

template <class T>
ParamTensor<T>& ParamSet<T>::at(std::string_view name) {
  return const_cast<ParamTensor<T>&>(std::as_const(*this).at(name));
}

template <class T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out = *this;
  for (auto& t : out.tensors) std::fill(t.values.begin(), t.values.end(), T(0));
  return out;
}

template struct ParamSet<float>;
template struct ParamSet<double>;

// ---------------------------------------------------------------------------
// Layout

namespace {

using u32 = std::uint32_t;

void add_conv(std::vector<TensorSpec>& out, const std::string& name, int cin, int cout) {
  out.push_back({name + ".w", {u32(cout), u32(cin), 3u, 3u}});
  out.push_back({name + ".b", {u32(cout)}});
}

void add_dense(std::vector<TensorSpec>& out, const std::string& name, int in, int outc) {
  out.push_back({name + ".w", {u32(outc), u32(in)}});
  out.push_back({name + ".b", {u32(outc)}});
}

std::string enc(int l) { return "enc" + std::to_string(l); }
std::string dec(int l) { return "dec" + std::to_string(l); }

}  // namespace

std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const int e = cfg.time_embed_dim;
  std::vector<TensorSpec> out;
  add_dense(out, "time", e, e);
  for (int l = 0; l < cfg.depth; ++l) {
    const int cin = l == 0 ? cfg.input_channels : cfg.channels(l - 1);
    add_conv(out, enc(l) + ".conv1", cin, cfg.channels(l));
    add_dense(out, enc(l) + ".temb", e, cfg.channels(l));
    add_conv(out, enc(l) + ".conv2", cfg.channels(l), cfg.channels(l));
  }
  const int cd = cfg.channels(cfg.depth);
  add_conv(out, "mid.conv1", cfg.channels(cfg.depth - 1), cd);
  add_dense(out, "mid.temb", e, cd);
  add_conv(out, "mid.conv2", cd, cd);
  for (int l = cfg.depth - 1; l >= 0; --l)
    add_conv(out, dec(l) + ".conv", cfg.channels(l + 1) + cfg.channels(l), cfg.channels(l));
  add_conv(out, "out.conv", cfg.channels(0), 1);
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const auto conv = [](std::size_t a, std::size_t b) { return 9 * a * b + b; };
  const auto dense = [](std::size_t a, std::size_t b) { return a * b + b; };
  const std::size_t e = static_cast<std::size_t>(cfg.time_embed_dim);
  const auto c = [&](int l) { return static_cast<std::size_t>(cfg.channels(l)); };

  std::size_t n = dense(e, e);
  for (int l = 0; l < cfg.depth; ++l) {
    const std::size_t cin = l == 0 ? static_cast<std::size_t>(cfg.input_channels) : c(l - 1);
    n += conv(cin, c(l)) + dense(e, c(l)) + conv(c(l), c(l));
  }
  n += conv(c(cfg.depth - 1), c(cfg.depth)) + dense(e, c(cfg.depth)) + conv(c(cfg.depth), c(cfg.depth));
  for (int l = 0; l < cfg.depth; ++l) n += conv(c(l + 1) + c(l), c(l));
  n += conv(c(0), 1);
  return n;
}

template <class T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0x1417);
  ParamSet<T> out;
  for (const TensorSpec& spec : parameter_layout(cfg)) {
    ParamTensor<T> t{spec.name, spec.shape, std::vector<T>(spec.size(), T(0))};
    const bool weight = spec.name.ends_with(".w");
    const bool output_layer = spec.name.starts_with("out.");
    if (weight && !output_layer) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < spec.shape.size(); ++d) fan_in *= spec.shape[d];
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : t.values) v = static_cast<T>(dist(rng));
    }
    out.tensors.push_back(std::move(t));
  }
  return out;
}

template ParamSet<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ParamSet<double> init_params<double>(const ModelConfig&, std::uint64_t);

template <class T>
void check_compatible(const ParamSet<T>& params, const ModelConfig& cfg) {
  const std::vector<TensorSpec> layout = parameter_layout(cfg);
  std::ostringstream report;
  bool ok = params.tensors.size() == layout.size();
  if (!ok) report << "  tensor count " << params.tensors.size() << " vs expected " << layout.size() << "\n";
  for (const TensorSpec& spec : layout) {
    const auto* t = params.find(spec.name);
    const auto dims = [](const std::vector<u32>& s) {
      std::string r;
      for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
      return r;
    };
    if (!t) {
      ok = false;
      report << "  " << spec.name << ": missing (expected " << dims(spec.shape) << ")\n";
    } else if (t->shape != spec.shape || t->values.size() != spec.size()) {
      ok = false;
      report << "  " << spec.name << ": " << dims(t->shape) << " vs expected " << dims(spec.shape) << "\n";
    }
  }
  if (!ok) throw std::invalid_argument("parameters do not match model config:\n" + report.str());
}

template void check_compatible<float>(const ParamSet<float>&, const ModelConfig&);
template void check_compatible<double>(const ParamSet<double>&, const ModelConfig&);

// ---------------------------------------------------------------------------
// Network

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <class T>
using VecMap = Eigen::Map<Vec<T>>;
template <class T>
using ConstVecMap = Eigen::Map<const Vec<T>>;

constexpr double kDataScale = 0.5;  // nominal spread of [0,1] images
constexpr double kDataCenter = 0.5;

template <class T>
T activate(Activation a, T z) {
  switch (a) {
    case Activation::silu: return z / (T(1) + std::exp(-z));
    case Activation::relu: return z > T(0) ? z : T(0);
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

template <class T>
T activate_grad(Activation a, T z) {
  switch (a) {
    case Activation::silu: {
      const T s = T(1) / (T(1) + std::exp(-z));
      return s * (T(1) + z * (T(1) - s));
    }
    case Activation::relu: return z > T(0) ? T(1) : T(0);
    case Activation::tanh: {
      const T t = std::tanh(z);
      return T(1) - t * t;
    }
  }
  return T(1);
}

template <class T>
Mat<T> apply_activation(Activation a, const Mat<T>& z) {
  return z.unaryExpr([a](T v) { return activate(a, v); });
}

template <class T>
void im2col(const Mat<T>& in, int h, int w, Mat<T>& cols) {
  const int channels = static_cast<int>(in.rows());
  cols.resize(channels * 9, h * w);
  for (int c = 0; c < channels; ++c) {
    const T* src = in.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          T* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + sy * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            row[x] = (sx >= 0 && sx < w) ? srow[sx] : T(0);
          }
        }
      }
  }
}

template <class T>
void col2im_add(const Mat<T>& cols, int h, int w, Mat<T>& out) {
  const int channels = static_cast<int>(out.rows());
  for (int c = 0; c < channels; ++c) {
    T* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          T* drow = dst + sy * w;
          const T* row = src + y * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx >= 0 && sx < w) drow[sx] += row[x];
          }
        }
      }
  }
}

template <class T>
Mat<T> avg_pool(const Mat<T>& in, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  Mat<T> out(in.rows(), oh * ow);
  for (int c = 0; c < in.rows(); ++c) {
    const T* src = in.row(c).data();
    T* dst = out.row(c).data();
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        dst[y * ow + x] = (src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1] + src[(2 * y + 1) * w + 2 * x] +
                           src[(2 * y + 1) * w + 2 * x + 1]) * T(0.25);
  }
  return out;
}

template <class T>
Mat<T> avg_pool_backward(const Mat<T>& d_out, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  Mat<T> d_in(d_out.rows(), h * w);
  for (int c = 0; c < d_out.rows(); ++c) {
    const T* src = d_out.row(c).data();
    T* dst = d_in.row(c).data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst[y * w + x] = src[(y / 2) * ow + x / 2] * T(0.25);
  }
  (void)oh;
  return d_in;
}

template <class T>
Mat<T> upsample(const Mat<T>& in, int h, int w) {  // (h, w) is the input size
  const int oh = 2 * h, ow = 2 * w;
  Mat<T> out(in.rows(), oh * ow);
  for (int c = 0; c < in.rows(); ++c) {
    const T* src = in.row(c).data();
    T* dst = out.row(c).data();
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / 2) * w + x / 2];
  }
  return out;
}

template <class T>
Mat<T> upsample_backward(const Mat<T>& d_out, int h, int w) {
  const int ow = 2 * w;
  Mat<T> d_in = Mat<T>::Zero(d_out.rows(), h * w);
  for (int c = 0; c < d_out.rows(); ++c) {
    const T* src = d_out.row(c).data();
    T* dst = d_in.row(c).data();
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < ow; ++x) dst[(y / 2) * w + x / 2] += src[y * ow + x];
  }
  return d_in;
}

template <class T>
Vec<T> fourier_features(int dim, double log_sigma) {
  const int m = dim / 2;
  Vec<T> phi(dim);
  for (int j = 0; j < m; ++j) {
    const double freq = m > 1 ? 0.25 * std::pow(64.0, static_cast<double>(j) / (m - 1)) : 1.0;
    phi(2 * j) = static_cast<T>(std::sin(freq * log_sigma));
    phi(2 * j + 1) = static_cast<T>(std::cos(freq * log_sigma));
  }
  return phi;
}

template <class T>
struct ConvRecord {
  Mat<T> cols;
  Mat<T> pre;  // pre-activation output
  int h = 0, w = 0;
};

template <class T>
struct Tape {
  Vec<T> phi, time_pre, temb;
  std::vector<ConvRecord<T>> enc1, enc2;
  std::vector<Vec<T>> enc_bias;  // per-level time projection
  ConvRecord<T> mid1, mid2;
  Vec<T> mid_bias;
  std::vector<ConvRecord<T>> decs;  // indexed by level
  ConvRecord<T> out;
  std::vector<int> level_h, level_w;
};

// Parameter views resolved once per call.
template <class P>
struct Layer {
  P* w = nullptr;
  P* b = nullptr;
};

template <class T>
class Network {
 public:
  Network(const ModelConfig& cfg, const ParamSet<T>& params) : cfg_(cfg), params_(params) {}

  Mat<T> run(const ModelInput& input, Tape<T>& tape) const {
    const int h0 = input.noisy->height();
    const int w0 = input.noisy->width();
    const int depth = cfg_.depth;
    const int e = cfg_.time_embed_dim;
    const Activation act = cfg_.activation;

    tape.level_h.resize(static_cast<std::size_t>(depth + 1));
    tape.level_w.resize(static_cast<std::size_t>(depth + 1));
    for (int l = 0; l <= depth; ++l) {
      tape.level_h[static_cast<std::size_t>(l)] = h0 >> l;
      tape.level_w[static_cast<std::size_t>(l)] = w0 >> l;
    }

    tape.phi = fourier_features<T>(e, std::log(input.sigma));
    {
      const auto wt = dense_w("time");
      tape.time_pre = wt * tape.phi + dense_b("time");
      tape.temb = tape.time_pre.unaryExpr([act](T v) { return activate(act, v); });
    }

    Mat<T> x(2, h0 * w0);
    const double c_in = 1.0 / std::sqrt(input.sigma * input.sigma + kDataScale * kDataScale);
    for (std::size_t i = 0; i < input.noisy->size(); ++i) {
      x(0, static_cast<Eigen::Index>(i)) = static_cast<T>((input.noisy->values()[i] - kDataCenter) * c_in);
      x(1, static_cast<Eigen::Index>(i)) = static_cast<T>(input.lmi->values()[i]);
    }

    tape.enc1.resize(static_cast<std::size_t>(depth));
    tape.enc2.resize(static_cast<std::size_t>(depth));
    tape.enc_bias.resize(static_cast<std::size_t>(depth));
    std::vector<Mat<T>> skips(static_cast<std::size_t>(depth));
    for (int l = 0; l < depth; ++l) {
      const int h = tape.level_h[static_cast<std::size_t>(l)], w = tape.level_w[static_cast<std::size_t>(l)];
      tape.enc_bias[static_cast<std::size_t>(l)] = dense_w(enc(l) + ".temb") * tape.temb + dense_b(enc(l) + ".temb");
      Mat<T> a = conv(enc(l) + ".conv1", x, h, w, &tape.enc_bias[static_cast<std::size_t>(l)],
                      tape.enc1[static_cast<std::size_t>(l)]);
      skips[static_cast<std::size_t>(l)] = conv(enc(l) + ".conv2", a, h, w, nullptr, tape.enc2[static_cast<std::size_t>(l)]);
      x = avg_pool(skips[static_cast<std::size_t>(l)], h, w);
    }

    {
      const int h = tape.level_h[static_cast<std::size_t>(depth)], w = tape.level_w[static_cast<std::size_t>(depth)];
      tape.mid_bias = dense_w("mid.temb") * tape.temb + dense_b("mid.temb");
      Mat<T> a = conv("mid.conv1", x, h, w, &tape.mid_bias, tape.mid1);
      x = conv("mid.conv2", a, h, w, nullptr, tape.mid2);
    }

    tape.decs.resize(static_cast<std::size_t>(depth));
    for (int l = depth - 1; l >= 0; --l) {
      const int h = tape.level_h[static_cast<std::size_t>(l)], w = tape.level_w[static_cast<std::size_t>(l)];
      Mat<T> up = upsample(x, tape.level_h[static_cast<std::size_t>(l + 1)], tape.level_w[static_cast<std::size_t>(l + 1)]);
      Mat<T> cat(up.rows() + skips[static_cast<std::size_t>(l)].rows(), h * w);
      cat << up, skips[static_cast<std::size_t>(l)];
      x = conv(dec(l) + ".conv", cat, h, w, nullptr, tape.decs[static_cast<std::size_t>(l)]);
    }

    return conv_linear("out.conv", x, h0, w0, tape.out);
  }

  void backprop(const Tape<T>& tape, const Mat<T>& d_output, ParamSet<T>& grads) const {
    const int depth = cfg_.depth;
    const Activation act = cfg_.activation;
    const auto lh = [&](int l) { return tape.level_h[static_cast<std::size_t>(l)]; };
    const auto lw = [&](int l) { return tape.level_w[static_cast<std::size_t>(l)]; };

    Vec<T> d_temb = Vec<T>::Zero(cfg_.time_embed_dim);

    Mat<T> dx = conv_backward("out.conv", tape.out, d_output, grads);

    std::vector<Mat<T>> d_skips(static_cast<std::size_t>(depth));
    for (int l = 0; l < depth; ++l) {
      const ConvRecord<T>& rec = tape.decs[static_cast<std::size_t>(l)];
      Mat<T> d_pre = dx.cwiseProduct(activation_grad(act, rec.pre));
      Mat<T> d_cat = conv_backward(dec(l) + ".conv", rec, d_pre, grads);
      const Eigen::Index up_rows = cfg_.channels(l + 1);
      Mat<T> d_up = d_cat.topRows(up_rows);
      d_skips[static_cast<std::size_t>(l)] = d_cat.bottomRows(d_cat.rows() - up_rows);
      dx = upsample_backward(d_up, lh(l + 1), lw(l + 1));
    }

    {
      Mat<T> d_pre2 = dx.cwiseProduct(activation_grad(act, tape.mid2.pre));
      Mat<T> d_a = conv_backward("mid.conv2", tape.mid2, d_pre2, grads);
      Mat<T> d_pre1 = d_a.cwiseProduct(activation_grad(act, tape.mid1.pre));
      bias_backward("mid.temb", tape, d_pre1, d_temb, grads);
      dx = conv_backward("mid.conv1", tape.mid1, d_pre1, grads);
    }

    for (int l = depth - 1; l >= 0; --l) {
      Mat<T> d_skip = avg_pool_backward(dx, lh(l), lw(l)) + d_skips[static_cast<std::size_t>(l)];
      const ConvRecord<T>& r2 = tape.enc2[static_cast<std::size_t>(l)];
      const ConvRecord<T>& r1 = tape.enc1[static_cast<std::size_t>(l)];
      Mat<T> d_pre2 = d_skip.cwiseProduct(activation_grad(act, r2.pre));
      Mat<T> d_a = conv_backward(enc(l) + ".conv2", r2, d_pre2, grads);
      Mat<T> d_pre1 = d_a.cwiseProduct(activation_grad(act, r1.pre));
      bias_backward(enc(l) + ".temb", tape, d_pre1, d_temb, grads);
      dx = conv_backward(enc(l) + ".conv1", r1, d_pre1, grads, l > 0);
    }

    const Vec<T> d_time_pre = d_temb.cwiseProduct(
        tape.time_pre.unaryExpr([act](T v) { return activate_grad(act, v); }));
    MatMap<T>(grads.at("time.w").values.data(), cfg_.time_embed_dim, cfg_.time_embed_dim).noalias() +=
        d_time_pre * tape.phi.transpose();
    VecMap<T>(grads.at("time.b").values.data(), cfg_.time_embed_dim) += d_time_pre;
  }

 private:
  ConstMatMap<T> dense_w(const std::string& name) const {
    const auto& t = params_.at(name + ".w");
    return ConstMatMap<T>(t.values.data(), t.shape[0], t.shape[1]);
  }
  ConstVecMap<T> dense_b(const std::string& name) const {
    const auto& t = params_.at(name + ".b");
    return ConstVecMap<T>(t.values.data(), t.shape[0]);
  }

  Mat<T> conv_linear(const std::string& name, const Mat<T>& in, int h, int w, ConvRecord<T>& rec) const {
    const auto& wt = params_.at(name + ".w");
    const int cout = static_cast<int>(wt.shape[0]);
    const int k = static_cast<int>(wt.shape[1]) * 9;
    rec.h = h;
    rec.w = w;
    im2col(in, h, w, rec.cols);
    Mat<T> out(cout, h * w);
    out.noalias() = ConstMatMap<T>(wt.values.data(), cout, k) * rec.cols;
    out.colwise() += dense_b(name);
    rec.pre = out;
    return out;
  }

  // conv + optional per-channel bias + activation.
  Mat<T> conv(const std::string& name, const Mat<T>& in, int h, int w, const Vec<T>* extra_bias,
              ConvRecord<T>& rec) const {
    Mat<T> out = conv_linear(name, in, h, w, rec);
    if (extra_bias) {
      out.colwise() += *extra_bias;
      rec.pre = out;
    }
    return apply_activation(cfg_.activation, out);
  }

  static Mat<T> activation_grad(Activation act, const Mat<T>& pre) {
    return pre.unaryExpr([act](T v) { return activate_grad(act, v); });
  }

  Mat<T> conv_backward(const std::string& name, const ConvRecord<T>& rec, const Mat<T>& d_pre,
                       ParamSet<T>& grads, bool need_input_grad = true) const {
    const auto& wt = params_.at(name + ".w");
    const int cout = static_cast<int>(wt.shape[0]);
    const int cin = static_cast<int>(wt.shape[1]);
    auto& gw = grads.at(name + ".w");
    auto& gb = grads.at(name + ".b");
    MatMap<T>(gw.values.data(), cout, cin * 9).noalias() += d_pre * rec.cols.transpose();
    VecMap<T>(gb.values.data(), cout) += d_pre.rowwise().sum();
    if (!need_input_grad) return {};
    Mat<T> d_cols(cin * 9, rec.h * rec.w);
    d_cols.noalias() = ConstMatMap<T>(wt.values.data(), cout, cin * 9).transpose() * d_pre;
    Mat<T> d_in = Mat<T>::Zero(cin, rec.h * rec.w);
    col2im_add(d_cols, rec.h, rec.w, d_in);
    return d_in;
  }

  void bias_backward(const std::string& name, const Tape<T>& tape, const Mat<T>& d_pre, Vec<T>& d_temb,
                     ParamSet<T>& grads) const {
    const Vec<T> d_bias = d_pre.rowwise().sum();
    auto& gw = grads.at(name + ".w");
    const int rows = static_cast<int>(gw.shape[0]), cols = static_cast<int>(gw.shape[1]);
    MatMap<T>(gw.values.data(), rows, cols).noalias() += d_bias * tape.temb.transpose();
    VecMap<T>(grads.at(name + ".b").values.data(), rows) += d_bias;
    d_temb.noalias() += dense_w(name).transpose() * d_bias;
  }

  const ModelConfig& cfg_;
  const ParamSet<T>& params_;
};

void check_input(const ModelConfig& cfg, const ModelInput& input) {
  if (!input.noisy || !input.lmi) throw std::invalid_argument("model input missing a channel");
  require_same_shape(*input.noisy, *input.lmi, "score model input");
  const int div = 1 << cfg.depth;
  if (input.noisy->height() % div != 0 || input.noisy->width() % div != 0 || input.noisy->empty())
    throw std::invalid_argument("score model input shape must be divisible by 2^depth");
  if (!(input.sigma > 0.0)) throw std::invalid_argument("score model noise level must be > 0");
}

template <class T>
Image to_image(const Mat<T>& m, int h, int w) {
  Image out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = static_cast<double>(m(0, static_cast<Eigen::Index>(i)));
  return out;
}

}  // namespace

template <class T>
Image forward(const ModelConfig& cfg, const ParamSet<T>& params, const ModelInput& input) {
  cfg.validate();
  check_input(cfg, input);
  Tape<T> tape;
  const Mat<T> out = Network<T>(cfg, params).run(input, tape);
  return to_image(out, input.noisy->height(), input.noisy->width());
}

template Image forward<float>(const ModelConfig&, const ParamSet<float>&, const ModelInput&);
template Image forward<double>(const ModelConfig&, const ParamSet<double>&, const ModelInput&);

template <class T>
GradResult<T> grad(const ModelConfig& cfg, const ParamSet<T>& params, std::span<const ModelInput> batch,
                   const OutputLossFn<T>& loss_fn, const std::vector<std::string>& frozen) {
  cfg.validate();
  for (const auto& item : batch) check_input(cfg, item);

  std::vector<ParamSet<T>> item_grads(batch.size());
  std::vector<double> item_loss(batch.size(), 0.0);
  const Network<T> net(cfg, params);

  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Tape<T> tape;
      const Mat<T> out = net.run(batch[i], tape);
      const OutputLoss<T> loss = loss_fn(i, std::span<const T>(out.data(), static_cast<std::size_t>(out.size())));
      if (!std::isfinite(loss.loss)) throw std::runtime_error("non-finite loss");
      if (loss.d_output.size() != static_cast<std::size_t>(out.size()))
        throw std::invalid_argument("loss gradient size does not match network output");
      item_loss[i] = loss.loss;
      item_grads[i] = params.zeros_like();
      const Mat<T> d_out = ConstMatMap<T>(loss.d_output.data(), 1, out.size());
      net.backprop(tape, d_out, item_grads[i]);
    }
  });

  GradResult<T> result;
  result.gradient = params.zeros_like();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    result.loss += item_loss[i];
    for (std::size_t k = 0; k < result.gradient.tensors.size(); ++k) {
      auto& acc = result.gradient.tensors[k].values;
      const auto& g = item_grads[i].tensors[k].values;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
  }
  for (const std::string& name : frozen) {
    auto& t = result.gradient.at(name);
    std::fill(t.values.begin(), t.values.end(), T(0));
  }
  return result;
}

template GradResult<float> grad<float>(const ModelConfig&, const ParamSet<float>&, std::span<const ModelInput>,
                                       const OutputLossFn<float>&, const std::vector<std::string>&);
template GradResult<double> grad<double>(const ModelConfig&, const ParamSet<double>&, std::span<const ModelInput>,
                                         const OutputLossFn<double>&, const std::vector<std::string>&);

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(v >> s));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint32_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint32_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize(const ParamSet<float>& params) {
  std::vector<unsigned char> out = {'M', 'I', 'D', 'F'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    if (t.name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
    if (t.shape.size() > 0xff) throw std::invalid_argument("tensor rank too large");
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, d);
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamSet<float> deserialize(std::span<const unsigned char> bytes) {
  ByteReader in(bytes);
  if (in.str(4) != "MIDF") throw std::runtime_error("checkpoint magic mismatch");
  const std::uint32_t version = in.u(4);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " unsupported");
  const std::uint32_t count = in.u(4);
  ParamSet<float> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    ParamTensor<float> t;
    t.name = in.str(in.u(2));
    const std::uint32_t ndim = in.u(1);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(in.u(4));
      n *= t.shape.back();
    }
    if (n > bytes.size()) throw std::runtime_error("checkpoint truncated");
    t.values.resize(n);
    for (float& v : t.values) v = std::bit_cast<float>(in.u(4));
    out.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return out;
}

void save_params(const ParamSet<float>& params, const std::filesystem::path& path) {
  const auto bytes = serialize(params);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

ParamSet<float> load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  return deserialize(bytes);
}

}  // namespace midiff
