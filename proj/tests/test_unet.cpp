#include "support.hpp"

#include "epseg/unet.hpp"

#include <doctest.h>

using namespace epseg;
using namespace epseg::testing;

TEST_CASE("config validation") {
  UNetConfig c;
  CHECK_NOTHROW(c.validate());
  c.input_size = 100;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("divisible"), std::invalid_argument);
  c = {};
  c.base_width = 0;
  CHECK_THROWS_AS(build<float>(c), std::invalid_argument);
  c = {};
  c.levels = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.input_channels = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("paper schedule f=16, levels=5") {
  UNetConfig c;
  for (int i = 0; i < 5; ++i) {
    CHECK(c.channels_at(i) == (16 << i));
    CHECK(c.size_at(i) == (128 >> i));
  }
  const auto net = build<float>(c);
  const auto& first = net.parameters()[net.layers()[0].weights];
  CHECK(first.value.shape() == Shape{16, 4, 3, 3});
  CHECK(first.value.size() + net.parameters()[net.layers()[0].bias].value.size() == 592);
  CHECK(net.param_count() == count_params(c));
}

TEST_CASE("count_params") {
  UNetConfig c{1, 2, 1, ConvBlock::standard, 2, 0, 1};
  // enc0 1->1: 9+1; enc1 1->2: 18+2; dec0 (1+2)->1: 27+1; head 1->1: 1+1.
  CHECK(count_params(c) == 10 + 20 + 28 + 2);
  CHECK_THROWS_AS(build<double>(c), std::invalid_argument);
  c.input_channels = 3;
  CHECK(build<double>(c).param_count() == count_params(c));

  UNetConfig a, b;
  a.base_width = 8;
  b.base_width = 16;
  const double ratio = double(count_params(b)) / double(count_params(a));
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);

  UNetConfig d;
  d.conv_block = ConvBlock::depthwise_separable;
  CHECK(count_params(d) < count_params(UNetConfig{}) / 5);
  CHECK(build<float>(d).param_count() == count_params(d));
}

TEST_CASE("channel/spatial schedule holds for arbitrary configs") {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    UNetConfig c;
    c.base_width = rand_int(rng, 1, 4);
    c.levels = rand_int(rng, 2, 4);
    c.input_size = (1 << (c.levels - 1)) * rand_int(rng, 1, 3);
    c.input_channels = rng.bernoulli(0.5) ? 3 : 4;
    c.convs_per_level = rand_int(rng, 1, 2);
    c.conv_block = rng.bernoulli(0.5) ? ConvBlock::standard : ConvBlock::depthwise_separable;
    const auto net = build<float>(c);
    CHECK(net.param_count() == count_params(c));

    ForwardCache<float> cache;
    const auto probs = net.forward(Tensor<float>(2, c.input_channels, c.input_size, c.input_size), cache);
    CHECK(probs.shape() == Shape{2, 1, c.input_size, c.input_size});
    std::size_t li = 0;
    for (int i = 0; i < c.levels; ++i) {
      for (int j = 0; j < c.convs_per_level; ++j, ++li) {
        CHECK(cache.layer_outputs[li].shape() == Shape{2, c.channels_at(i), c.size_at(i), c.size_at(i)});
      }
    }
    for (int i = c.levels - 2; i >= 0; --i) {
      // Decoder input = skip (f*2^i) + upsampled deeper features (f*2^(i+1)).
      CHECK(cache.layer_inputs[li].c() == c.channels_at(i) + c.channels_at(i + 1));
      for (int j = 0; j < c.convs_per_level; ++j, ++li) {
        CHECK(cache.layer_outputs[li].shape() == Shape{2, c.channels_at(i), c.size_at(i), c.size_at(i)});
      }
    }
  }
}

TEST_CASE("forward") {
  UNetConfig c;
  c.base_width = 4;
  c.levels = 3;
  c.input_size = 32;
  auto net = build<float>(c);
  Rng rng(12);
  const Tensor<float> x = random_tensor(rng, {2, 4, 32, 32}, 0, 1).cast<float>();

  SUBCASE("probabilities in (0, 1)") {
    const auto p = net.forward(x);
    CHECK(p.shape() == Shape{2, 1, 32, 32});
    CHECK((p.data().array() > 0).all());
    CHECK((p.data().array() < 1).all());
  }
  SUBCASE("zero weights give 0.5 everywhere") {
    for (auto& p : net.parameters()) p.value.set_zero();
    CHECK((net.forward(x).data().array() == 0.5f).all());
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_WITH_AS(net.forward(Tensor<float>(1, 3, 32, 32)), doctest::Contains("model expects extreme points"),
                         ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor<float>(1, 4, 16, 16)), ShapeError);
  }
  SUBCASE("batched forward equals per-sample forward") {
    const auto both = net.forward(x);
    Tensor<float> one(1, 4, 32, 32);
    one.sample(0) = x.sample(1);
    const auto single = net.forward(one);
    CHECK((both.sample(1) - single.sample(0)).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("same seed, same weights; different seed, different weights") {
  UNetConfig c;
  c.seed = 42;
  const auto a = build<float>(c), b = build<float>(c);
  c.seed = 43;
  const auto d = build<float>(c);
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    all_equal &= a.parameters()[i].value.data() == b.parameters()[i].value.data();
    any_diff |= a.parameters()[i].value.data() != d.parameters()[i].value.data();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("He-uniform init bounds and zero biases") {
  const auto net = build<double>(UNetConfig{});
  for (const auto& layer : net.layers()) {
    const auto& w = net.parameters()[layer.weights].value;
    const double bound = std::sqrt(6.0 / (w.c() * w.h() * w.w()));
    CHECK(w.data().cwiseAbs().maxCoeff() <= bound);
    CHECK(w.data().cwiseAbs().maxCoeff() > 0.5 * bound);
    CHECK(net.parameters()[layer.bias].value.data().isZero());
  }
}

namespace {

// Finite differences of the batch loss w.r.t. ~1% of the weights (at least one per tensor).
double end_to_end_gradcheck(ConvBlock block, std::uint64_t seed) {
  UNetConfig c;
  c.base_width = 4;
  c.levels = 3;
  c.input_size = 32;
  c.conv_block = block;
  c.seed = seed;
  auto net = build<double>(c);
  Rng rng(seed);
  for (auto& p : net.parameters()) {
    // Non-zero biases so no ReLU input sits exactly at the kink.
    if (p.name.ends_with(".bias")) p.value = random_tensor(rng, p.value.shape(), -0.1, 0.1);
  }
  const TensorD x = random_tensor(rng, {2, 4, 32, 32}, 0, 1);
  TensorD gt(2, 1, 32, 32);
  for (int n = 0; n < 2; ++n) {
    for (int y = 8; y < 24; ++y) {
      for (int xx = 10 + n; xx < 22; ++xx) gt(n, 0, y, xx) = 1;
    }
  }
  const LossOptions opts{LossKind::avg_distance};
  ForwardCache<double> cache;
  TensorD dprobs;
  batch_loss(opts, net.forward(x, cache), gt, &dprobs);
  const auto grads = net.backward(cache, dprobs);

  std::vector<double> analytic, numeric;
  const double h = 1e-6;
  for (std::size_t pi = 0; pi < net.parameters().size(); ++pi) {
    auto& v = net.parameters()[pi].value.data();
    const Eigen::Index picks = (v.size() + 99) / 100;
    for (Eigen::Index k = 0; k < picks; ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng.below(v.size()));
      const double keep = v[i];
      v[i] = keep + h;
      const double fp = batch_loss<double>(opts, net.forward(x), gt);
      v[i] = keep - h;
      const double fm = batch_loss<double>(opts, net.forward(x), gt);
      v[i] = keep;
      numeric.push_back((fp - fm) / (2 * h));
      analytic.push_back(grads[pi].data()[i]);
    }
  }
  CHECK(double(analytic.size()) >= 0.01 * double(net.param_count()));
  const Eigen::Map<const VectorX<double>> a(analytic.data(), analytic.size()), n(numeric.data(), numeric.size());
  return relative_error(a, n);
}

}  // namespace

TEST_CASE("end-to-end gradient matches finite differences") {
  CHECK(end_to_end_gradcheck(ConvBlock::standard, 13) <= 1e-3);
  CHECK(end_to_end_gradcheck(ConvBlock::depthwise_separable, 14) <= 1e-3);
}

TEST_CASE("cast preserves parameters") {
  const auto f = build<float>(UNetConfig{4, 2, 3, ConvBlock::standard, 8, 5, 2});
  const auto d = f.cast<double>();
  const auto back = d.cast<float>();
  for (std::size_t i = 0; i < f.parameters().size(); ++i) {
    CHECK(back.parameters()[i].value.data() == f.parameters()[i].value.data());
    CHECK(back.parameters()[i].name == f.parameters()[i].name);
  }
}
