#pragma once

#include <filesystem>
#include <string>

#include "midiff/image.hpp"
#include "midiff/random.hpp"

namespace midiff::test {

inline Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng = make_stream(seed, 77);
  Image img(h, w);
  for (double& v : img.values()) v = uniform(rng, 0.0, 1.0);
  return img;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(MIDIFF_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace midiff::test
