#pragma once

#include "epseg/kernels.hpp"
#include "epseg/loss.hpp"
#include "epseg/metrics.hpp"
#include "epseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace epseg::testing {

using TensorD = Tensor<double>;

inline TensorD random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  TensorD t(s);
  for (Eigen::Index i = 0; i < t.data().size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

inline int rand_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

inline bool same_mask(const BinaryMask& a, const BinaryMask& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a == b).all();
}

inline BinaryMask random_mask(Rng& rng, int h, int w, double density) {
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m(y, x) = rng.bernoulli(density);
  }
  return m;
}

// ||a - b|| / max(||a|| + ||b||, tiny): symmetric and scale free.
inline double relative_error(const VectorX<double>& a, const VectorX<double>& b) {
  const double denom = a.norm() + b.norm();
  if (denom < 1e-300) return 0;
  return (a - b).norm() / denom;
}

// Central differences of scalar f with respect to every entry of *x.
inline VectorX<double> numeric_gradient(const std::function<double()>& f, VectorX<double>& x, double h = 1e-6) {
  VectorX<double> g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double dot(const TensorD& a, const TensorD& b) { return a.data().dot(b.data()); }

// Each check runs one random trial and returns the largest relative error over
// all inputs of the kernel.

inline double gradcheck_conv2d(Rng& rng) {
  const int n = rand_int(rng, 1, 2), c = rand_int(rng, 1, 3), k = rand_int(rng, 1, 3);
  const int kh = rng.bernoulli(0.5) ? 3 : rand_int(rng, 1, 4), kw = rng.bernoulli(0.5) ? kh : rand_int(rng, 1, 4);
  ConvGeometry g{rand_int(rng, 1, 2), rng.bernoulli(0.5) ? Padding::same : Padding::valid};
  const int h = rand_int(rng, std::max(kh, 2), 7), w = rand_int(rng, std::max(kw, 2), 7);
  TensorD x = random_tensor(rng, {n, c, h, w});
  TensorD wt = random_tensor(rng, {k, c, kh, kw});
  VectorX<double> b = random_tensor(rng, {k, 1, 1, 1}).data();
  const TensorD y = conv2d<double>(x, wt, b, g);
  const TensorD dy = random_tensor(rng, y.shape());
  const auto an = conv2d_backward(x, wt, dy, g);
  auto f = [&] { return dot(conv2d<double>(x, wt, b, g), dy); };
  return std::max({relative_error(an.dx.data(), numeric_gradient(f, x.data())),
                   relative_error(an.dweights.data(), numeric_gradient(f, wt.data())),
                   relative_error(an.dbias, numeric_gradient(f, b))});
}

inline double gradcheck_depthwise_separable(Rng& rng) {
  const int n = rand_int(rng, 1, 2), c = rand_int(rng, 1, 3), k = rand_int(rng, 1, 3);
  const int h = rand_int(rng, 2, 6), w = rand_int(rng, 2, 6);
  TensorD x = random_tensor(rng, {n, c, h, w});
  TensorD dw = random_tensor(rng, {c, 1, 3, 3});
  TensorD pw = random_tensor(rng, {k, c, 1, 1});
  VectorX<double> b = random_tensor(rng, {k, 1, 1, 1}).data();
  const TensorD dy = random_tensor(rng, {n, k, h, w});
  const auto an = depthwise_separable_conv2d_backward(x, dw, pw, dy);
  auto f = [&] { return dot(depthwise_separable_conv2d<double>(x, dw, pw, b), dy); };
  return std::max({relative_error(an.dx.data(), numeric_gradient(f, x.data())),
                   relative_error(an.ddepthwise.data(), numeric_gradient(f, dw.data())),
                   relative_error(an.dpointwise.data(), numeric_gradient(f, pw.data())),
                   relative_error(an.dbias, numeric_gradient(f, b))});
}

inline double gradcheck_maxpool(Rng& rng) {
  const int n = rand_int(rng, 1, 2), c = rand_int(rng, 1, 3);
  const int h = 2 * rand_int(rng, 1, 4), w = 2 * rand_int(rng, 1, 4);
  // Well-separated distinct values so no window has a near tie.
  TensorD x(n, c, h, w);
  std::vector<int> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i) x.data()[i] = 0.01 * perm[i];
  const auto pooled = maxpool2d(x);
  const TensorD dy = random_tensor(rng, pooled.out.shape());
  const TensorD dx = maxpool2d_backward(dy, pooled.argmax, x.shape());
  auto f = [&] { return dot(maxpool2d(x).out, dy); };
  return relative_error(dx.data(), numeric_gradient(f, x.data()));
}

inline double gradcheck_upsample(Rng& rng) {
  TensorD x = random_tensor(rng, {rand_int(rng, 1, 2), rand_int(rng, 1, 3), rand_int(rng, 1, 4), rand_int(rng, 1, 4)});
  const TensorD dy = random_tensor(rng, {x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  const TensorD dx = upsample_nearest2x_backward(dy);
  auto f = [&] { return dot(upsample_nearest2x(x), dy); };
  return relative_error(dx.data(), numeric_gradient(f, x.data()));
}

inline double gradcheck_concat(Rng& rng) {
  const int n = rand_int(rng, 1, 2), h = rand_int(rng, 1, 4), w = rand_int(rng, 1, 4);
  TensorD a = random_tensor(rng, {n, rand_int(rng, 1, 3), h, w});
  TensorD b = random_tensor(rng, {n, rand_int(rng, 1, 3), h, w});
  const TensorD dy = random_tensor(rng, {n, a.c() + b.c(), h, w});
  const auto [da, db] = split_channels(dy, a.c());
  auto f = [&] { return dot(concat_channels(a, b), dy); };
  return std::max(relative_error(da.data(), numeric_gradient(f, a.data())),
                  relative_error(db.data(), numeric_gradient(f, b.data())));
}

inline double gradcheck_relu(Rng& rng) {
  TensorD x = random_tensor(rng, {rand_int(rng, 1, 2), rand_int(rng, 1, 3), rand_int(rng, 1, 5), rand_int(rng, 1, 5)});
  // Keep inputs away from the kink at 0.
  for (Eigen::Index i = 0; i < x.data().size(); ++i) {
    if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
  }
  const TensorD dy = random_tensor(rng, x.shape());
  const TensorD dx = relu_backward(relu(x), dy);
  auto f = [&] { return dot(relu(x), dy); };
  return relative_error(dx.data(), numeric_gradient(f, x.data()));
}

inline double gradcheck_sigmoid(Rng& rng) {
  TensorD x = random_tensor(rng, {rand_int(rng, 1, 2), rand_int(rng, 1, 3), rand_int(rng, 1, 5), rand_int(rng, 1, 5)},
                            -6, 6);
  const TensorD dy = random_tensor(rng, x.shape());
  const TensorD dx = sigmoid_backward(sigmoid(x), dy);
  auto f = [&] { return dot(sigmoid(x), dy); };
  return relative_error(dx.data(), numeric_gradient(f, x.data()));
}

// Predictions away from 0/1 (the BCE clamp) and a non-empty ground truth.
inline double gradcheck_loss(Rng& rng, LossKind kind) {
  const int n = rand_int(rng, 1, 3), h = rand_int(rng, 2, 6), w = rand_int(rng, 2, 6);
  TensorD y = random_tensor(rng, {n, 1, h, w}, 0.05, 0.95);
  TensorD t(n, 1, h, w);
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < h * w; ++p) t.plane_ptr(i, 0)[p] = rng.bernoulli(0.4) ? 1 : 0;
    t.plane_ptr(i, 0)[rng.below(h * w)] = 1;
  }
  const LossOptions opts{kind, rng.uniform(0.1, 0.9)};
  TensorD dy;
  batch_loss(opts, y, t, &dy);
  auto f = [&] { return batch_loss<double>(opts, y, t); };
  return relative_error(dy.data(), numeric_gradient(f, y.data()));
}

struct GradCheck {
  std::string name;
  std::function<double(Rng&)> trial;
};

inline std::vector<GradCheck> gradient_checks() {
  return {
      {"conv2d", gradcheck_conv2d},
      {"depthwise_separable", gradcheck_depthwise_separable},
      {"maxpool", gradcheck_maxpool},
      {"upsample", gradcheck_upsample},
      {"concat", gradcheck_concat},
      {"relu", gradcheck_relu},
      {"sigmoid", gradcheck_sigmoid},
      {"avg_distance_loss", [](Rng& r) { return gradcheck_loss(r, LossKind::avg_distance); }},
      {"soft_iou_loss", [](Rng& r) { return gradcheck_loss(r, LossKind::soft_iou); }},
      {"bce_iou_loss", [](Rng& r) { return gradcheck_loss(r, LossKind::bce_iou); }},
  };
}

// Direct nested-loop cross-correlation.
template <typename Scalar>
Tensor<Scalar> conv2d_naive(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const VectorX<Scalar>& b,
                            ConvGeometry g) {
  const int kh = w.h(), kw = w.w(), s = g.stride;
  int ph = 0, pw = 0, oh, ow;
  if (g.padding == Padding::same) {
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
    oh = (x.h() - 1) / s + 1;
    ow = (x.w() - 1) / s + 1;
  } else {
    oh = (x.h() - kh) / s + 1;
    ow = (x.w() - kw) / s + 1;
  }
  Tensor<Scalar> y(x.n(), w.n(), oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int k = 0; k < w.n(); ++k) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = b[k];
          for (int c = 0; c < x.c(); ++c) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const int yy = i * s + u - ph, xx = j * s + v - pw;
                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += double(w(k, c, u, v)) * double(x(n, c, yy, xx));
              }
            }
          }
          y(n, k, i, j) = static_cast<Scalar>(acc);
        }
      }
    }
  }
  return y;
}

// Distance to the nearest seed by checking every seed.
inline DistanceMap edt_brute_force(const BinaryMask& seeds) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < seeds.rows(); ++y) {
    for (int x = 0; x < seeds.cols(); ++x) {
      if (seeds(y, x)) pts.emplace_back(y, x);
    }
  }
  DistanceMap d(seeds.rows(), seeds.cols());
  for (int y = 0; y < seeds.rows(); ++y) {
    for (int x = 0; x < seeds.cols(); ++x) {
      long best = std::numeric_limits<long>::max();
      for (auto [py, px] : pts) best = std::min(best, long(py - y) * (py - y) + long(px - x) * (px - x));
      d(y, x) = pts.empty() ? std::numeric_limits<double>::infinity() : std::sqrt(double(best));
    }
  }
  return d;
}

// Groups records with std::map and sums in record order, as the aggregators do.
inline std::pair<double, std::map<int, double>> miou_brute_force(const std::vector<EvalRecord>& records) {
  std::map<int, std::vector<double>> groups;
  for (const auto& r : records) groups[r.class_id].push_back(r.iou);
  std::map<int, double> per_class;
  double total = 0;
  for (const auto& [id, v] : groups) {
    double s = 0;
    for (double x : v) s += x;
    per_class[id] = s / v.size();
    total += per_class[id];
  }
  return {groups.empty() ? 0.0 : total / groups.size(), per_class};
}

inline double iiou_brute_force(const std::vector<EvalRecord>& records) {
  double s = 0;
  for (const auto& r : records) s += r.iou;
  return records.empty() ? 0.0 : s / records.size();
}

inline double aiou_brute_force(const std::vector<double>& ious, std::size_t batch) {
  std::vector<double> means;
  for (std::size_t i = 0; i < ious.size(); i += batch) {
    double s = 0;
    const std::size_t end = std::min(ious.size(), i + batch);
    for (std::size_t j = i; j < end; ++j) s += ious[j];
    means.push_back(s / (end - i));
  }
  double s = 0;
  for (double m : means) s += m;
  return means.empty() ? 0.0 : s / means.size();
}

}  // namespace epseg::testing
