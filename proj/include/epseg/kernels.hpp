#pragma once

#include "epseg/tensor.hpp"

#include <vector>

namespace epseg {

enum class Padding { same, valid };

struct ConvGeometry {
  int stride = 1;
  Padding padding = Padding::same;
};

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dweights;
  VectorX<Scalar> dbias;
};

/// Cross-correlation of `x` (N x C x H x W) with `weights` (K x C x kh x kw).
///
/// "same" padding zero-pads (k-1)/2 before and the remainder after each axis,
/// so the output has ceil(H/stride) rows; "valid" uses no padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const VectorRef<Scalar>& bias,
                      ConvGeometry geometry = {});

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weights,
                                    const Tensor<Scalar>& dy, ConvGeometry geometry = {});

template <typename Scalar>
struct DepthwiseSeparableGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> ddepthwise;
  Tensor<Scalar> dpointwise;
  VectorX<Scalar> dbias;
};

// Per-channel spatial filter (C x 1 x kh x kw), stride 1, same padding.
template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& depthwise);

/// Depthwise spatial filter followed by a 1x1 pointwise conv (K x C x 1 x 1) with bias.
template <typename Scalar>
Tensor<Scalar> depthwise_separable_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& depthwise,
                                          const Tensor<Scalar>& pointwise, const VectorRef<Scalar>& bias);

template <typename Scalar>
DepthwiseSeparableGrads<Scalar> depthwise_separable_conv2d_backward(const Tensor<Scalar>& x,
                                                                    const Tensor<Scalar>& depthwise,
                                                                    const Tensor<Scalar>& pointwise,
                                                                    const Tensor<Scalar>& dy);

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> out;
  // Flat index into the input plane of the selected element, per output element.
  std::vector<int> argmax;
};

/// 2x2 stride-2 max pooling. Ties go to the first element in row-major order.
template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Tensor<Scalar>& dy, const std::vector<int>& argmax, const Shape& x_shape);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x_backward(const Tensor<Scalar>& dy);

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Inverse of concat_channels: first `a_channels` channels, then the rest.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& t, int a_channels);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

// Takes the forward output y = sigmoid(x).
template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy);

template <typename Scalar>
inline Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace epseg
