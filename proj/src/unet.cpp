#include "epseg/unet.hpp"

#include "epseg/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace epseg {

std::string to_string(ConvBlock block) {
  return block == ConvBlock::standard ? "standard" : "depthwise_separable";
}

ConvBlock conv_block_from_string(const std::string& name) {
  if (name == "standard") return ConvBlock::standard;
  if (name == "depthwise_separable") return ConvBlock::depthwise_separable;
  throw std::invalid_argument("unknown conv block type '" + name + "'");
}

void UNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid UNetConfig: " + msg); };
  if (base_width < 1) fail("base_width must be >= 1");
  if (levels < 2) fail("levels must be >= 2");
  if (levels > 16) fail("levels must be <= 16");
  if (input_channels != 3 && input_channels != 4) fail("input_channels must be 3 (RGB) or 4 (RGB+EP)");
  if (convs_per_level < 1) fail("convs_per_level must be >= 1");
  if (input_size < 1 || input_size % (1 << (levels - 1)) != 0) {
    fail("input_size " + std::to_string(input_size) + " is not divisible by 2^(levels-1) = " +
         std::to_string(1 << (levels - 1)));
  }
}

namespace {

std::int64_t conv_param_count(ConvBlock kind, std::int64_t in, std::int64_t out, std::int64_t k) {
  if (kind == ConvBlock::standard) return in * out * k * k + out;
  return in * k * k + in * out + out;
}

}  // namespace

// Pure count: any input_channels >= 1 is accepted here, unlike build().
std::int64_t count_params(const UNetConfig& config) {
  if (config.input_channels < 1) throw std::invalid_argument("invalid UNetConfig: input_channels must be >= 1");
  UNetConfig shape = config;
  shape.input_channels = 3;
  shape.validate();
  const int L = config.levels;
  std::int64_t total = 0;
  for (int i = 0; i < L; ++i) {
    const int out = config.channels_at(i);
    int in = i == 0 ? config.input_channels : config.channels_at(i - 1);
    for (int j = 0; j < config.convs_per_level; ++j, in = out) {
      total += conv_param_count(config.conv_block, in, out, 3);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    const int out = config.channels_at(i);
    int in = out + config.channels_at(i + 1);
    for (int j = 0; j < config.convs_per_level; ++j, in = out) {
      total += conv_param_count(config.conv_block, in, out, 3);
    }
  }
  return total + conv_param_count(ConvBlock::standard, config.base_width, 1, 1);
}

template <typename Scalar>
Network<Scalar>::Network(const UNetConfig& config) : config_(config) {
  config_.validate();
  const int L = config_.levels;
  for (int i = 0; i < L; ++i) {
    const int out = config_.channels_at(i);
    int in = i == 0 ? config_.input_channels : config_.channels_at(i - 1);
    for (int j = 0; j < config_.convs_per_level; ++j, in = out) {
      add_conv("enc" + std::to_string(i) + ".conv" + std::to_string(j), config_.conv_block, in, out, 3, true);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    const int out = config_.channels_at(i);
    int in = out + config_.channels_at(i + 1);
    for (int j = 0; j < config_.convs_per_level; ++j, in = out) {
      add_conv("dec" + std::to_string(i) + ".conv" + std::to_string(j), config_.conv_block, in, out, 3, true);
    }
  }
  add_conv("head", ConvBlock::standard, config_.base_width, 1, 1, false);
  initialize();
}

template <typename Scalar>
int Network<Scalar>::add_param(std::string name, Shape shape) {
  params_.push_back({std::move(name), Tensor<Scalar>(shape)});
  return static_cast<int>(params_.size()) - 1;
}

template <typename Scalar>
void Network<Scalar>::add_conv(const std::string& prefix, ConvBlock kind, int in, int out, int kernel, bool relu) {
  ConvLayer layer{kind, in, out, kernel, relu};
  if (kind == ConvBlock::standard) {
    layer.weights = add_param(prefix + ".weight", {out, in, kernel, kernel});
  } else {
    layer.weights = add_param(prefix + ".depthwise", {in, 1, kernel, kernel});
    layer.pointwise = add_param(prefix + ".pointwise", {out, in, 1, 1});
  }
  layer.bias = add_param(prefix + ".bias", {out, 1, 1, 1});
  layers_.push_back(layer);
}

// He-uniform: U(-b, b) with b = sqrt(6 / fan_in); biases start at zero.
template <typename Scalar>
void Network<Scalar>::initialize() {
  Rng rng(config_.seed);
  auto fill = [&rng](Tensor<Scalar>& t, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (Eigen::Index i = 0; i < t.data().size(); ++i) {
      t.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  };
  for (const auto& layer : layers_) {
    auto& w = params_[layer.weights].value;
    fill(w, w.c() * w.h() * w.w());
    if (layer.pointwise >= 0) {
      auto& pw = params_[layer.pointwise].value;
      fill(pw, pw.c());
    }
  }
}

template <typename Scalar>
std::int64_t Network<Scalar>::param_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += static_cast<std::int64_t>(p.value.size());
  return total;
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::apply(const ConvLayer& layer, const Tensor<Scalar>& x) const {
  const auto& bias = params_[layer.bias].value.data();
  if (layer.kind == ConvBlock::standard) return conv2d(x, params_[layer.weights].value, bias);
  return depthwise_separable_conv2d(x, params_[layer.weights].value, params_[layer.pointwise].value, bias);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::apply_backward(const ConvLayer& layer, const Tensor<Scalar>& x,
                                               const Tensor<Scalar>& dz,
                                               std::vector<Tensor<Scalar>>& grads) const {
  if (layer.kind == ConvBlock::standard) {
    auto g = conv2d_backward(x, params_[layer.weights].value, dz);
    grads[layer.weights] = std::move(g.dweights);
    grads[layer.bias].data() = g.dbias;
    return std::move(g.dx);
  }
  auto g = depthwise_separable_conv2d_backward(x, params_[layer.weights].value, params_[layer.pointwise].value, dz);
  grads[layer.weights] = std::move(g.ddepthwise);
  grads[layer.pointwise] = std::move(g.dpointwise);
  grads[layer.bias].data() = g.dbias;
  return std::move(g.dx);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& batch) const {
  return run(batch, nullptr);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& batch, ForwardCache<Scalar>& cache) const {
  cache = ForwardCache<Scalar>{};
  return run(batch, &cache);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::run(const Tensor<Scalar>& batch, ForwardCache<Scalar>* cache) const {
  const int S = config_.input_size;
  if (batch.c() != config_.input_channels || batch.h() != S || batch.w() != S) {
    std::string msg = "network expects input (N x " + std::to_string(config_.input_channels) + " x " +
                      std::to_string(S) + " x " + std::to_string(S) + "), got " + to_string(batch.shape());
    if (config_.input_channels == 4 && batch.c() == 3) msg += ": model expects extreme points";
    throw ShapeError(msg);
  }
  const int L = config_.levels;
  std::size_t li = 0;
  Tensor<Scalar> x = batch;
  auto step = [&](const ConvLayer& layer) {
    Tensor<Scalar> z = apply(layer, x);
    if (layer.relu) z = relu(z);
    if (cache) {
      cache->layer_inputs.push_back(std::move(x));
      cache->layer_outputs.push_back(z);
    }
    x = std::move(z);
  };

  std::vector<Tensor<Scalar>> skips;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < config_.convs_per_level; ++j) step(layers_[li++]);
    if (i < L - 1) {
      skips.push_back(x);
      auto pooled = maxpool2d(x);
      if (cache) {
        cache->pool_argmax.push_back(std::move(pooled.argmax));
        cache->pool_input_shapes.push_back(x.shape());
        cache->skip_channels.push_back(x.c());
      }
      x = std::move(pooled.out);
    }
  }
  for (int i = L - 2; i >= 0; --i) {
    x = concat_channels(skips[i], upsample_nearest2x(x));
    for (int j = 0; j < config_.convs_per_level; ++j) step(layers_[li++]);
  }
  step(layers_[li++]);
  Tensor<Scalar> probs = sigmoid(x);
  if (cache) cache->probs = probs;
  return probs;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> Network<Scalar>::backward(const ForwardCache<Scalar>& cache,
                                                      const Tensor<Scalar>& dprobs) const {
  if (cache.layer_inputs.size() != layers_.size()) {
    throw std::logic_error("Network::backward: cache does not come from a training forward pass");
  }
  if (dprobs.shape() != cache.probs.shape()) {
    throw ShapeError("Network::backward: gradient " + to_string(dprobs.shape()) + " does not match output " +
                     to_string(cache.probs.shape()));
  }
  std::vector<Tensor<Scalar>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());

  const int L = config_.levels;
  std::size_t li = layers_.size();
  Tensor<Scalar> d = sigmoid_backward(cache.probs, dprobs);
  auto step_back = [&]() {
    --li;
    const ConvLayer& layer = layers_[li];
    if (layer.relu) d = relu_backward(cache.layer_outputs[li], d);
    d = apply_backward(layer, cache.layer_inputs[li], d, grads);
  };

  step_back();  // head
  std::vector<Tensor<Scalar>> dskips(L - 1);
  for (int i = 0; i <= L - 2; ++i) {
    for (int j = 0; j < config_.convs_per_level; ++j) step_back();
    auto [dskip, dup] = split_channels(d, cache.skip_channels[i]);
    dskips[i] = std::move(dskip);
    d = upsample_nearest2x_backward(dup);
  }
  for (int i = L - 1; i >= 0; --i) {
    if (i < L - 1) {
      d = maxpool2d_backward(d, cache.pool_argmax[i], cache.pool_input_shapes[i]);
      d.data() += dskips[i].data();
    }
    for (int j = 0; j < config_.convs_per_level; ++j) step_back();
  }
  return grads;
}

template class Network<float>;
template class Network<double>;

}  // namespace epseg
