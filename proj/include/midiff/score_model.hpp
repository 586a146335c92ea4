#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "midiff/image.hpp"

namespace midiff {

enum class Activation { silu, relu, tanh };

std::string to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Encoder-decoder score network layout. Level l works at resolution
/// (H / 2^l, W / 2^l) with channels(l) features; `depth` levels are pooled
/// before the bottleneck, so H and W must be divisible by 2^depth.
struct ModelConfig {
  int input_channels = 2;  // noisy state + LMI map
  int base_width = 32;
  int depth = 2;
  int time_embed_dim = 32;  // Fourier features of log sigma, even
  Activation activation = Activation::silu;

  void validate() const;
  int channels(int level) const { return level == 0 ? base_width : 2 * base_width; }
};

struct TensorSpec {
  std::string name;
  std::vector<std::uint32_t> shape;

  std::size_t size() const;
};

template <class T>
struct ParamTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<T> values;
};

template <class T>
struct ParamSet {
  std::vector<ParamTensor<T>> tensors;

  std::size_t total_size() const;
  const ParamTensor<T>& at(std::string_view name) const;
  ParamTensor<T>& at(std::string_view name);
  const ParamTensor<T>* find(std::string_view name) const;

  /// Same layout, every value zero.
  ParamSet zeros_like() const;

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors) {
      ParamTensor<U> c{t.name, t.shape, std::vector<U>(t.values.size())};
      for (std::size_t i = 0; i < t.values.size(); ++i) c.values[i] = static_cast<U>(t.values[i]);
      out.tensors.push_back(std::move(c));
    }
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      const auto& x = a.tensors[i];
      const auto& y = b.tensors[i];
      if (x.name != y.name || x.shape != y.shape || x.values != y.values) return false;
    }
    return true;
  }
};

/// Tensor names and shapes, in serialization order.
std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg);

/// Closed-form parameter count (see README "Score network").
std::size_t parameter_count(const ModelConfig& cfg);

/// Fan-in scaled uniform initialization, U(-sqrt(3/fan_in), sqrt(3/fan_in))
/// for weights, zero biases, zero output layer.
template <class T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws std::invalid_argument with a per-tensor shape report when `params`
/// does not match the layout of `cfg`.
template <class T>
void check_compatible(const ParamSet<T>& params, const ModelConfig& cfg);

struct ModelInput {
  const Image* noisy;
  const Image* lmi;
  double sigma;  // noise level of `noisy`
};

/// Network output: sigma * score, i.e. the normalized noise direction.
/// Callers divide by sigma to obtain the score.
template <class T>
Image forward(const ModelConfig& cfg, const ParamSet<T>& params, const ModelInput& input);

template <class T>
struct OutputLoss {
  double loss = 0.0;
  std::vector<T> d_output;  // dLoss / d(network output), row-major
};

/// Per-item loss on the raw network output.
template <class T>
using OutputLossFn = std::function<OutputLoss<T>(std::size_t item, std::span<const T> output)>;

template <class T>
struct GradResult {
  double loss = 0.0;  // sum of item losses
  ParamSet<T> gradient;
};

/// Reverse-mode gradient of sum_i loss_fn(i, forward(batch[i])). Tensors named
/// in `frozen` receive zero gradient. Items are evaluated concurrently and
/// reduced in item order.
template <class T>
GradResult<T> grad(const ModelConfig& cfg, const ParamSet<T>& params, std::span<const ModelInput> batch,
                   const OutputLossFn<T>& loss_fn, const std::vector<std::string>& frozen = {});

// ---------------------------------------------------------------------------
// Serialization: "MIDF", u32 version, u32 tensor count, then per tensor
// u16 name length, name, u8 ndim, u32 dims, float32 payload. Little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize(const ParamSet<float>& params);
ParamSet<float> deserialize(std::span<const unsigned char> bytes);

void save_params(const ParamSet<float>& params, const std::filesystem::path& path);
ParamSet<float> load_params(const std::filesystem::path& path);

}  // namespace midiff
