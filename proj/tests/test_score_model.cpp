#include <doctest.h>

#include <cmath>
#include <fstream>

#include "midiff/parallel.hpp"
#include "midiff/score_model.hpp"
#include "support.hpp"

using namespace midiff;

namespace {

template <class T>
void randomize(ParamSet<T>& p, std::uint64_t seed, double scale) {
  Rng rng = make_stream(seed, 5);
  for (auto& t : p.tensors)
    for (T& v : t.values) v = static_cast<T>(uniform(rng, -scale, scale));
}

// Architecture count written out level by level.
std::size_t count_by_hand(int w, int depth, int e) {
  auto conv = [](std::size_t in, std::size_t out) { return 9 * in * out + out; };
  auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto ch = [&](int l) { return static_cast<std::size_t>(l == 0 ? w : 2 * w); };
  std::size_t n = dense(e, e);
  std::size_t in = 2;
  for (int l = 0; l < depth; ++l) {
    n += conv(in, ch(l)) + dense(e, ch(l)) + conv(ch(l), ch(l));
    in = ch(l);
  }
  n += conv(ch(depth - 1), ch(depth)) + dense(e, ch(depth)) + conv(ch(depth), ch(depth));
  for (int l = depth - 1; l >= 0; --l) n += conv(ch(l + 1) + ch(l), ch(l));
  n += conv(ch(0), 1);
  return n;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.depth = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.base_width = 4;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.time_embed_dim = 7;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.input_channels = 3;
  CHECK_THROWS(c.validate());
  CHECK(parse_activation("relu") == Activation::relu);
  CHECK_THROWS(parse_activation("gelu"));
}

TEST_CASE("parameter count matches the architecture") {
  for (int w : {8, 16, 32})
    for (int d : {1, 2, 3}) {
      ModelConfig c;
      c.base_width = w;
      c.depth = d;
      CHECK(parameter_count(c) == count_by_hand(w, d, c.time_embed_dim));
      CHECK(init_params<float>(c, 0).total_size() == parameter_count(c));
    }
}

TEST_CASE("initialization") {
  ModelConfig c;
  c.base_width = 16;
  const auto a = init_params<float>(c, 0), b = init_params<float>(c, 0), other = init_params<float>(c, 1);
  CHECK(a == b);
  CHECK_FALSE(a == other);
  for (const auto& t : a.tensors)
    for (float v : t.values) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) < 1.0f);
    }
  for (float v : a.at("out.conv.w").values) CHECK(v == 0.0f);
}

TEST_CASE("forward shape and zero output") {
  ModelConfig c;
  const Image x = test::random_image(32, 32, 1), l = test::random_image(32, 32, 2);
  const auto p = init_params<float>(c, 3);
  const Image out = forward(c, p, {&x, &l, 0.7});
  CHECK(out.height() == 32);
  CHECK(out.width() == 32);
  for (double v : out.values()) CHECK(v == 0.0);

  const Image odd = test::random_image(30, 30, 1);
  CHECK_THROWS(forward(c, p, {&odd, &odd, 0.7}));
  const Image other = test::random_image(32, 16, 1);
  CHECK_THROWS(forward(c, p, {&x, &other, 0.7}));
}

TEST_CASE("forward responds to every input") {
  ModelConfig c;
  c.base_width = 8;
  auto p = init_params<double>(c, 4);
  randomize(p, 4, 0.2);
  const Image x = test::random_image(16, 16, 5), l = test::random_image(16, 16, 6);
  Image l2 = l;
  l2(3, 3) += 0.5;
  const Image base = forward(c, p, {&x, &l, 0.5});
  double diff_lmi = 0.0, diff_sigma = 0.0;
  const Image a = forward(c, p, {&x, &l2, 0.5});
  const Image b = forward(c, p, {&x, &l, 2.0});
  for (std::size_t i = 0; i < base.size(); ++i) {
    diff_lmi += std::pow(a.values()[i] - base.values()[i], 2);
    diff_sigma += std::pow(b.values()[i] - base.values()[i], 2);
  }
  CHECK(diff_lmi > 0.0);
  CHECK(diff_sigma > 0.0);
  CHECK(forward(c, p, {&x, &l, 0.5}) == base);
}

TEST_CASE("analytic gradients match central differences") {
  for (const Activation act : {Activation::silu, Activation::tanh}) {
    ModelConfig c;
    c.base_width = 16;
    c.depth = 2;
    c.activation = act;
    auto p = init_params<double>(c, 7);
    randomize(p, 7, 0.25);
    const Image x = test::random_image(8, 8, 8), l = test::random_image(8, 8, 9);
    const Image target = test::random_image(8, 8, 10);
    const std::vector<ModelInput> batch{{&x, &l, 0.3}, {&l, &x, 3.0}};

    auto loss_of = [&](const ParamSet<double>& q) {
      double total = 0.0;
      for (const auto& in : batch) {
        const Image o = forward(c, q, in);
        for (std::size_t i = 0; i < o.size(); ++i) total += 0.5 * std::pow(o.values()[i] - target.values()[i], 2);
      }
      return total;
    };
    const OutputLossFn<double> loss_fn = [&](std::size_t, std::span<const double> out) {
      OutputLoss<double> r;
      r.d_output.resize(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = out[i] - target.values()[i];
        r.loss += 0.5 * d * d;
        r.d_output[i] = d;
      }
      return r;
    };
    const auto g = grad(c, p, std::span<const ModelInput>(batch), loss_fn);
    CHECK(g.loss == doctest::Approx(loss_of(p)).epsilon(1e-12));

    Rng rng(42);
    const std::size_t total = p.total_size();
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::size_t k = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
      std::size_t ti = 0;
      while (k >= p.tensors[ti].values.size()) k -= p.tensors[ti++].values.size();
      const double h = 1e-4;
      auto q = p;
      q.tensors[ti].values[k] += h;
      const double up = loss_of(q);
      q.tensors[ti].values[k] -= 2 * h;
      const double down = loss_of(q);
      const double fd = (up - down) / (2 * h);
      const double an = g.gradient.tensors[ti].values[k];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
      CHECK_MESSAGE(rel <= 1e-5, p.tensors[ti].name, "[", k, "] analytic ", an, " fd ", fd);
    }
    MESSAGE("worst relative error ", worst);
  }
}

TEST_CASE("frozen tensors and constant losses give zero gradient") {
  ModelConfig c;
  c.base_width = 8;
  auto p = init_params<double>(c, 1);
  randomize(p, 1, 0.2);
  const Image x = test::random_image(8, 8, 1);
  const std::vector<ModelInput> batch{{&x, &x, 1.0}};
  const OutputLossFn<double> sum_loss = [](std::size_t, std::span<const double> out) {
    OutputLoss<double> r;
    r.d_output.assign(out.size(), 1.0);
    for (double v : out) r.loss += v;
    return r;
  };
  const auto g = grad(c, p, std::span<const ModelInput>(batch), sum_loss, {"enc0.conv1.w", "time.b"});
  for (double v : g.gradient.at("enc0.conv1.w").values) CHECK(v == 0.0);
  for (double v : g.gradient.at("time.b").values) CHECK(v == 0.0);
  double other = 0.0;
  for (double v : g.gradient.at("enc0.conv2.w").values) other += std::abs(v);
  CHECK(other > 0.0);

  const OutputLossFn<double> constant = [](std::size_t, std::span<const double> out) {
    OutputLoss<double> r;
    r.loss = 3.0;
    r.d_output.assign(out.size(), 0.0);
    return r;
  };
  const auto z = grad(c, p, std::span<const ModelInput>(batch), constant);
  for (const auto& t : z.gradient.tensors)
    for (double v : t.values) CHECK(v == 0.0);

  const OutputLossFn<double> nan_loss = [](std::size_t, std::span<const double> out) {
    OutputLoss<double> r;
    r.loss = NAN;
    r.d_output.assign(out.size(), 0.0);
    return r;
  };
  CHECK_THROWS(grad(c, p, std::span<const ModelInput>(batch), nan_loss));
}

TEST_CASE("gradient is independent of the worker count") {
  ModelConfig c;
  c.base_width = 8;
  auto p = init_params<float>(c, 2);
  randomize(p, 2, 0.2);
  std::vector<Image> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(test::random_image(8, 8, 20 + i));
  std::vector<ModelInput> batch;
  for (const auto& x : xs) batch.push_back({&x, &x, 0.5});
  const OutputLossFn<float> loss = [](std::size_t i, std::span<const float> out) {
    OutputLoss<float> r;
    r.d_output.resize(out.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      r.loss += 0.5 * out[k] * out[k];
      r.d_output[k] = out[k] + static_cast<float>(i);
    }
    return r;
  };
  set_thread_count(1);
  const auto a = grad(c, p, std::span<const ModelInput>(batch), loss);
  set_thread_count(4);
  const auto b = grad(c, p, std::span<const ModelInput>(batch), loss);
  set_thread_count(0);
  CHECK(a.gradient == b.gradient);
  CHECK(a.loss == b.loss);
}

TEST_CASE("serialization") {
  ModelConfig c;
  c.base_width = 8;
  auto p = init_params<float>(c, 3);
  randomize(p, 3, 0.5);
  const auto bytes = serialize(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MIDF");
  CHECK(deserialize(bytes) == p);

  SUBCASE("file round trip") {
    const auto dir = test::scratch("score_model");
    save_params(p, dir / "p.midf");
    CHECK(load_params(dir / "p.midf") == p);
  }
  SUBCASE("truncated") {
    for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
      CHECK_THROWS(deserialize(cut));
    }
  }
  SUBCASE("bad magic and version") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH(deserialize(bad), doctest::Contains("magic"));
    bad = bytes;
    bad[4] = 99;
    CHECK_THROWS_WITH(deserialize(bad), doctest::Contains("version"));
  }
  SUBCASE("cross-config load is rejected with a shape report") {
    ModelConfig wide = c;
    wide.base_width = 16;
    CHECK_THROWS_WITH(check_compatible(p, wide), doctest::Contains("enc0.conv1.w"));
    CHECK_NOTHROW(check_compatible(p, c));
  }
}
