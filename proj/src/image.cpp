#include "midiff/image.hpp"

#include <algorithm>
#include <numeric>

namespace midiff {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw std::invalid_argument("negative image extent");
  data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

Image::Image(int height, int width, std::vector<double> values)
    : height_(height), width_(width), data_(std::move(values)) {
  if (height < 0 || width < 0) throw std::invalid_argument("negative image extent");
  if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw std::invalid_argument("pixel count does not match image extent");
}

double Image::wrapped(int row, int col) const {
  return data_[index(wrap_index(row, height_), wrap_index(col, width_))];
}

void require_same_shape(const Image& a, const Image& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(what + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                                "x" + std::to_string(b.width()) + ")");
  }
}

Image clamp(const Image& img, double lo, double hi) {
  Image out = img;
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

double mean(const Image& img) {
  if (img.empty()) return 0.0;
  const auto v = img.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace midiff
