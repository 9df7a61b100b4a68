#include "epseg/kernels.hpp"

#include <algorithm>

namespace epseg {
namespace {

struct ConvPlan {
  int kh, kw;
  int pad_y, pad_x;
  int out_h, out_w;
  int stride;
};

ConvPlan plan_conv(const Shape& x, int kh, int kw, ConvGeometry g) {
  if (g.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvPlan p{kh, kw, 0, 0, 0, 0, g.stride};
  if (g.padding == Padding::same) {
    p.pad_y = (kh - 1) / 2;
    p.pad_x = (kw - 1) / 2;
    p.out_h = (x.h - 1) / g.stride + 1;
    p.out_w = (x.w - 1) / g.stride + 1;
  } else {
    if (kh > x.h || kw > x.w) {
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " does not fit input " + to_string(x));
    }
    p.out_h = (x.h - kh) / g.stride + 1;
    p.out_w = (x.w - kw) / g.stride + 1;
  }
  return p;
}

template <typename Scalar>
void im2col(const Tensor<Scalar>& x, int n, const ConvPlan& p, MatrixRM<Scalar>& col) {
  const int C = x.c(), H = x.h(), W = x.w();
  col.resize(static_cast<Eigen::Index>(C) * p.kh * p.kw, static_cast<Eigen::Index>(p.out_h) * p.out_w);
  Eigen::Index row = 0;
  for (int c = 0; c < C; ++c) {
    const Scalar* src = x.plane_ptr(n, c);
    for (int ky = 0; ky < p.kh; ++ky) {
      for (int kx = 0; kx < p.kw; ++kx, ++row) {
        Scalar* dst = col.row(row).data();
        for (int oy = 0; oy < p.out_h; ++oy) {
          const int iy = oy * p.stride + ky - p.pad_y;
          Scalar* d = dst + oy * p.out_w;
          if (iy < 0 || iy >= H) {
            std::fill(d, d + p.out_w, Scalar(0));
            continue;
          }
          const Scalar* s = src + iy * W;
          for (int ox = 0; ox < p.out_w; ++ox) {
            const int ix = ox * p.stride + kx - p.pad_x;
            d[ox] = (ix >= 0 && ix < W) ? s[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const MatrixRM<Scalar>& col, const ConvPlan& p, Tensor<Scalar>& dx, int n) {
  const int C = dx.c(), H = dx.h(), W = dx.w();
  Eigen::Index row = 0;
  for (int c = 0; c < C; ++c) {
    Scalar* dst = dx.plane_ptr(n, c);
    for (int ky = 0; ky < p.kh; ++ky) {
      for (int kx = 0; kx < p.kw; ++kx, ++row) {
        const Scalar* src = col.row(row).data();
        for (int oy = 0; oy < p.out_h; ++oy) {
          const int iy = oy * p.stride + ky - p.pad_y;
          if (iy < 0 || iy >= H) continue;
          Scalar* d = dst + iy * W;
          const Scalar* s = src + oy * p.out_w;
          for (int ox = 0; ox < p.out_w; ++ox) {
            const int ix = ox * p.stride + kx - p.pad_x;
            if (ix >= 0 && ix < W) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void check_conv_args(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, Eigen::Index bias_size) {
  if (weights.c() != x.c()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels but weights " +
                     to_string(weights.shape()) + " expect " + std::to_string(weights.c()));
  }
  if (bias_size != weights.n()) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias_size) + " != output channels " +
                     std::to_string(weights.n()));
  }
}

template <typename Scalar>
Eigen::Map<const MatrixRM<Scalar>> weight_matrix(const Tensor<Scalar>& w) {
  return {w.ptr(), w.n(), static_cast<Eigen::Index>(w.c()) * w.h() * w.w()};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const VectorRef<Scalar>& bias,
                      ConvGeometry geometry) {
  check_conv_args(x, weights, bias.size());
  const ConvPlan p = plan_conv(x.shape(), weights.h(), weights.w(), geometry);
  Tensor<Scalar> out(x.n(), weights.n(), p.out_h, p.out_w);
  const auto wm = weight_matrix(weights);
  MatrixRM<Scalar> col;
  for (int n = 0; n < x.n(); ++n) {
    auto y = out.sample(n);
    if (p.kh == 1 && p.kw == 1 && p.stride == 1) {
      y.noalias() = wm * x.sample(n);
    } else {
      im2col(x, n, p, col);
      y.noalias() = wm * col;
    }
    y.colwise() += bias;
  }
  EPSEG_CHECK_FINITE(out, "conv2d");
  return out;
}

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weights,
                                    const Tensor<Scalar>& dy, ConvGeometry geometry) {
  check_conv_args(x, weights, weights.n());
  const ConvPlan p = plan_conv(x.shape(), weights.h(), weights.w(), geometry);
  if (dy.shape() != Shape{x.n(), weights.n(), p.out_h, p.out_w}) {
    throw ShapeError("conv2d_backward: gradient shape " + to_string(dy.shape()) + " does not match output");
  }
  Conv2dGrads<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(weights.shape()),
                        VectorX<Scalar>::Zero(weights.n())};
  const auto wm = weight_matrix(weights);
  Eigen::Map<MatrixRM<Scalar>> dw(g.dweights.ptr(), wm.rows(), wm.cols());
  MatrixRM<Scalar> col, dcol;
  const bool pointwise = p.kh == 1 && p.kw == 1 && p.stride == 1;
  for (int n = 0; n < x.n(); ++n) {
    const auto dyn = dy.sample(n);
    g.dbias += dyn.rowwise().sum();
    if (pointwise) {
      dw.noalias() += dyn * x.sample(n).transpose();
      g.dx.sample(n).noalias() = wm.transpose() * dyn;
    } else {
      im2col(x, n, p, col);
      dw.noalias() += dyn * col.transpose();
      dcol.noalias() = wm.transpose() * dyn;
      col2im_add(dcol, p, g.dx, n);
    }
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& depthwise) {
  if (depthwise.n() != x.c() || depthwise.c() != 1) {
    throw ShapeError("depthwise_conv2d: weights " + to_string(depthwise.shape()) + " do not match " +
                     std::to_string(x.c()) + " input channels");
  }
  const int H = x.h(), W = x.w(), kh = depthwise.h(), kw = depthwise.w();
  const int py = (kh - 1) / 2, px = (kw - 1) / 2;
  Tensor<Scalar> out(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.plane_ptr(n, c);
      Scalar* dst = out.plane_ptr(n, c);
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const Scalar wv = depthwise(c, 0, ky, kx);
          const int y0 = std::max(0, py - ky), y1 = std::min(H, H + py - ky);
          const int x0 = std::max(0, px - kx), x1 = std::min(W, W + px - kx);
          for (int oy = y0; oy < y1; ++oy) {
            const Scalar* s = src + (oy + ky - py) * W + (kx - px);
            Scalar* d = dst + oy * W;
            for (int ox = x0; ox < x1; ++ox) d[ox] += wv * s[ox];
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> depthwise_separable_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& depthwise,
                                          const Tensor<Scalar>& pointwise, const VectorRef<Scalar>& bias) {
  if (pointwise.h() != 1 || pointwise.w() != 1) {
    throw ShapeError("depthwise_separable_conv2d: pointwise weights must be Kx C x1x1, got " +
                     to_string(pointwise.shape()));
  }
  return conv2d(depthwise_conv2d(x, depthwise), pointwise, bias);
}

template <typename Scalar>
DepthwiseSeparableGrads<Scalar> depthwise_separable_conv2d_backward(const Tensor<Scalar>& x,
                                                                    const Tensor<Scalar>& depthwise,
                                                                    const Tensor<Scalar>& pointwise,
                                                                    const Tensor<Scalar>& dy) {
  const Tensor<Scalar> mid = depthwise_conv2d(x, depthwise);
  auto pg = conv2d_backward(mid, pointwise, dy);
  const Tensor<Scalar>& dmid = pg.dx;

  DepthwiseSeparableGrads<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(depthwise.shape()),
                                    std::move(pg.dweights), std::move(pg.dbias)};
  const int H = x.h(), W = x.w(), kh = depthwise.h(), kw = depthwise.w();
  const int py = (kh - 1) / 2, px = (kw - 1) / 2;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.plane_ptr(n, c);
      const Scalar* gout = dmid.plane_ptr(n, c);
      Scalar* gin = g.dx.plane_ptr(n, c);
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const Scalar wv = depthwise(c, 0, ky, kx);
          Scalar acc = 0;
          const int y0 = std::max(0, py - ky), y1 = std::min(H, H + py - ky);
          const int x0 = std::max(0, px - kx), x1 = std::min(W, W + px - kx);
          for (int oy = y0; oy < y1; ++oy) {
            const int off = (oy + ky - py) * W + (kx - px);
            const Scalar* s = src + off;
            Scalar* gi = gin + off;
            const Scalar* go = gout + oy * W;
            for (int ox = x0; ox < x1; ++ox) {
              acc += go[ox] * s[ox];
              gi[ox] += wv * go[ox];
            }
          }
          g.ddepthwise(c, 0, ky, kx) += acc;
        }
      }
    }
  }
  return g;
}

template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(x.shape()));
  }
  const int oh = x.h() / 2, ow = x.w() / 2, W = x.w();
  PoolResult<Scalar> r{Tensor<Scalar>(x.n(), x.c(), oh, ow), std::vector<int>(x.size() / 4)};
  std::size_t k = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.plane_ptr(n, c);
      Scalar* dst = r.out.plane_ptr(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++k) {
          const int base = 2 * oy * W + 2 * ox;
          int best = base;
          for (int idx : {base + 1, base + W, base + W + 1}) {
            if (src[idx] > src[best]) best = idx;
          }
          dst[oy * ow + ox] = src[best];
          r.argmax[k] = best;
        }
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Tensor<Scalar>& dy, const std::vector<int>& argmax, const Shape& x_shape) {
  if (dy.size() != argmax.size() || x_shape.size() != 4 * dy.size()) {
    throw ShapeError("maxpool2d_backward: gradient " + to_string(dy.shape()) + " does not match input " +
                     to_string(x_shape));
  }
  Tensor<Scalar> dx(x_shape);
  const std::size_t plane_out = dy.shape().plane();
  const std::size_t plane_in = x_shape.plane();
  for (std::size_t k = 0; k < dy.size(); ++k) {
    const std::size_t p = k / plane_out;
    dx.data()[p * plane_in + argmax[k]] += dy.data()[k];
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x) {
  const int H = x.h(), W = x.w();
  Tensor<Scalar> out(x.n(), x.c(), 2 * H, 2 * W);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* src = x.plane_ptr(n, c);
      Scalar* dst = out.plane_ptr(n, c);
      for (int y = 0; y < H; ++y) {
        Scalar* r0 = dst + (2 * y) * (2 * W);
        Scalar* r1 = r0 + 2 * W;
        for (int xx = 0; xx < W; ++xx) {
          const Scalar v = src[y * W + xx];
          r0[2 * xx] = r0[2 * xx + 1] = r1[2 * xx] = r1[2 * xx + 1] = v;
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x_backward(const Tensor<Scalar>& dy) {
  if (dy.h() % 2 != 0 || dy.w() % 2 != 0) {
    throw ShapeError("upsample_nearest2x_backward: odd gradient dims " + to_string(dy.shape()));
  }
  const int H = dy.h() / 2, W = dy.w() / 2;
  Tensor<Scalar> dx(dy.n(), dy.c(), H, W);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const Scalar* src = dy.plane_ptr(n, c);
      Scalar* dst = dx.plane_ptr(n, c);
      for (int y = 0; y < H; ++y) {
        const Scalar* r0 = src + (2 * y) * (2 * W);
        const Scalar* r1 = r0 + 2 * W;
        for (int xx = 0; xx < W; ++xx) {
          dst[y * W + xx] = (r0[2 * xx] + r0[2 * xx + 1]) + (r1[2 * xx] + r1[2 * xx + 1]);
        }
      }
    }
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " disagree on batch or spatial size");
  }
  Tensor<Scalar> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    out.sample(n).topRows(a.c()) = a.sample(n);
    out.sample(n).bottomRows(b.c()) = b.sample(n);
  }
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> split_channels(const Tensor<Scalar>& t, int a_channels) {
  if (a_channels < 1 || a_channels >= t.c()) {
    throw ShapeError("split_channels: cannot split " + std::to_string(t.c()) + " channels at " +
                     std::to_string(a_channels));
  }
  std::pair<Tensor<Scalar>, Tensor<Scalar>> r{Tensor<Scalar>(t.n(), a_channels, t.h(), t.w()),
                                              Tensor<Scalar>(t.n(), t.c() - a_channels, t.h(), t.w())};
  for (int n = 0; n < t.n(); ++n) {
    r.first.sample(n) = t.sample(n).topRows(a_channels);
    r.second.sample(n) = t.sample(n).bottomRows(t.c() - a_channels);
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.data() = x.data().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  if (x.shape() != dy.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<Scalar> dx(x.shape());
  dx.data() = (x.data().array() > Scalar(0)).select(dy.data(), Scalar(0));
  return dx;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.data() = x.data().unaryExpr([](Scalar v) { return sigmoid(v); });
  EPSEG_CHECK_FINITE(out, "sigmoid");
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
  if (y.shape() != dy.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  Tensor<Scalar> dx(y.shape());
  dx.data() = dy.data().cwiseProduct(y.data().cwiseProduct((Scalar(1) - y.data().array()).matrix()));
  return dx;
}

#define EPSEG_INSTANTIATE_KERNELS(S)                                                                       \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const VectorRef<S>&, ConvGeometry);          \
  template Conv2dGrads<S> conv2d_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,           \
                                          ConvGeometry);                                                   \
  template Tensor<S> depthwise_conv2d(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> depthwise_separable_conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                                const VectorRef<S>&);                                        \
  template DepthwiseSeparableGrads<S> depthwise_separable_conv2d_backward(                                 \
      const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                             \
  template PoolResult<S> maxpool2d(const Tensor<S>&);                                                      \
  template Tensor<S> maxpool2d_backward(const Tensor<S>&, const std::vector<int>&, const Shape&);          \
  template Tensor<S> upsample_nearest2x(const Tensor<S>&);                                                 \
  template Tensor<S> upsample_nearest2x_backward(const Tensor<S>&);                                        \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                                  \
  template std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>&, int);                          \
  template Tensor<S> relu(const Tensor<S>&);                                                               \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                            \
  template Tensor<S> sigmoid_backward(const Tensor<S>&, const Tensor<S>&);

EPSEG_INSTANTIATE_KERNELS(float)
EPSEG_INSTANTIATE_KERNELS(double)

}  // namespace epseg
