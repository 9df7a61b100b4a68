#pragma once

#include "epseg/kernels.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace epseg {

enum class ConvBlock { standard, depthwise_separable };

std::string to_string(ConvBlock block);
ConvBlock conv_block_from_string(const std::string& name);

struct UNetConfig {
  int base_width = 16;
  int levels = 5;
  int input_channels = 4;
  ConvBlock conv_block = ConvBlock::standard;
  int input_size = 128;
  std::uint64_t seed = 0;
  // 3x3 convs per encoder/decoder level.
  int convs_per_level = 2;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  int channels_at(int level) const { return base_width << level; }
  int size_at(int level) const { return input_size >> level; }
  bool operator==(const UNetConfig&) const = default;
};

std::int64_t count_params(const UNetConfig& config);

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
};

// One conv + optional ReLU. Standard blocks use `weights` (K x C x k x k);
// depthwise-separable blocks use `weights` as the depthwise filter (C x 1 x k x k)
// plus `pointwise` (K x C x 1 x 1).
struct ConvLayer {
  ConvBlock kind = ConvBlock::standard;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  bool relu = true;
  int weights = -1;
  int pointwise = -1;
  int bias = -1;
};

/// Activations retained by a training forward pass.
template <typename Scalar>
struct ForwardCache {
  std::vector<Tensor<Scalar>> layer_inputs;
  std::vector<Tensor<Scalar>> layer_outputs;
  std::vector<std::vector<int>> pool_argmax;
  std::vector<Shape> pool_input_shapes;
  std::vector<int> skip_channels;
  Tensor<Scalar> probs;
};

/// The encoder-decoder: `levels` encoder stages of width f, 2f, 4f, ... with
/// 2x2 max pooling between them, a mirrored decoder that upsamples by nearest
/// neighbour and concatenates the same-resolution encoder output (skip first),
/// and a 1x1 conv + sigmoid head producing one probability per pixel.
template <typename Scalar>
class Network {
 public:
  explicit Network(const UNetConfig& config);

  const UNetConfig& config() const { return config_; }
  std::vector<Parameter<Scalar>>& parameters() { return params_; }
  const std::vector<Parameter<Scalar>>& parameters() const { return params_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::int64_t param_count() const;

  Tensor<Scalar> forward(const Tensor<Scalar>& batch) const;
  Tensor<Scalar> forward(const Tensor<Scalar>& batch, ForwardCache<Scalar>& cache) const;

  // Gradients w.r.t. every parameter (same order as parameters()) given dLoss/dProbs.
  std::vector<Tensor<Scalar>> backward(const ForwardCache<Scalar>& cache, const Tensor<Scalar>& dprobs) const;

  template <typename Other>
  Network<Other> cast() const;

 private:
  int add_param(std::string name, Shape shape);
  void add_conv(const std::string& prefix, ConvBlock kind, int in, int out, int kernel, bool relu);
  void initialize();
  Tensor<Scalar> run(const Tensor<Scalar>& batch, ForwardCache<Scalar>* cache) const;
  Tensor<Scalar> apply(const ConvLayer& layer, const Tensor<Scalar>& x) const;
  Tensor<Scalar> apply_backward(const ConvLayer& layer, const Tensor<Scalar>& x, const Tensor<Scalar>& dz,
                                std::vector<Tensor<Scalar>>& grads) const;

  UNetConfig config_;
  std::vector<Parameter<Scalar>> params_;
  std::vector<ConvLayer> layers_;
};

template <typename Scalar>
Network<Scalar> build(const UNetConfig& config) {
  return Network<Scalar>(config);
}

template <typename Scalar>
template <typename Other>
Network<Other> Network<Scalar>::cast() const {
  Network<Other> out(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.parameters()[i].value = params_[i].value.template cast<Other>();
  }
  return out;
}

}  // namespace epseg
