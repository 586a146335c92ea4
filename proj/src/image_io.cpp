#include "midiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>

namespace midiff {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

class PgmReader {
 public:
  explicit PgmReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  // Next whitespace-delimited header token, skipping '#' comments.
  int integer() {
    skip_space();
    std::string digits;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) digits += static_cast<char>(bytes_[pos_++]);
    if (digits.empty()) throw std::runtime_error("malformed PGM header");
    if (digits.size() > 9) throw std::runtime_error("malformed PGM header: value too large");
    return std::stoi(digits);
  }

  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw std::runtime_error("malformed PGM header");
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 2;
};

bool has_png_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

Image load_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw std::runtime_error("unsupported PNG bit depth (16-bit) in " + path.string());
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  Image out(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = buffer[i] / 255.0;
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buffer[i] = to_byte(img.values()[i]);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace

Image decode_pgm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5'))
    throw std::runtime_error("malformed PGM header: expected P2 or P5");
  const bool binary = bytes[1] == '5';
  PgmReader reader(bytes);
  const int width = reader.integer();
  const int height = reader.integer();
  const int maxval = reader.integer();
  if (width <= 0 || height <= 0) throw std::runtime_error("malformed PGM header: bad extent");
  if (maxval <= 0) throw std::runtime_error("malformed PGM header: bad maxval");
  if (maxval > 255) throw std::runtime_error("unsupported PGM bit depth (maxval " + std::to_string(maxval) + ")");

  Image out(height, width);
  if (binary) {
    reader.single_space();
    const std::size_t start = reader.position();
    if (bytes.size() < start + out.size()) throw std::runtime_error("truncated PGM pixel data");
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = static_cast<double>(bytes[start + i]) / maxval;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const int v = reader.integer();
      if (v > maxval) throw std::runtime_error("PGM sample exceeds maxval");
      out.values()[i] = static_cast<double>(v) / maxval;
    }
  }
  return out;
}

std::vector<unsigned char> encode_pgm(const Image& img) {
  const std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.values()) out.push_back(to_byte(v));
  return out;
}

Image load_image(const std::filesystem::path& path) {
  if (has_png_extension(path)) return load_png(path);
  return decode_pgm(read_file(path));
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (has_png_extension(path)) {
    save_png(img, path);
    return;
  }
  const std::vector<unsigned char> bytes = encode_pgm(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (double& v : out.values()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace midiff
