#include "support.hpp"

#include <doctest.h>

using namespace epseg;
using namespace epseg::testing;

namespace {

// 8x8 plane with a 4x4 ground-truth square at (2..5, 2..5).
VectorX<double> square_gt() {
  VectorX<double> t = VectorX<double>::Zero(64);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) t[y * 8 + x] = 1;
  }
  return t;
}

VectorX<double> random_binary(Rng& rng, int n, double p) {
  VectorX<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.bernoulli(p) ? 1 : 0;
  return v;
}

}  // namespace

TEST_CASE("soft_overlap") {
  const VectorX<double> t = square_gt();
  SUBCASE("identical binary") {
    const auto o = soft_overlap<double>(t, t);
    CHECK(o.intersection == 16);
    CHECK(o.union_area == 16);
    CHECK(o.gt_area == 16);
  }
  SUBCASE("empty prediction") {
    const auto o = soft_overlap<double>(VectorX<double>::Zero(64), t);
    CHECK(o.intersection == 0);
    CHECK(o.union_area == 16);
    CHECK(o.gt_area == 16);
  }
  SUBCASE("one pixel at 0.5") {
    VectorX<double> y = t;
    y[2 * 8 + 2] = 0.5;
    const auto o = soft_overlap<double>(y, t);
    CHECK(o.intersection == 15.5);
    CHECK(o.union_area == 16.0);
  }
  SUBCASE("0 <= a_i <= a_u on random soft input") {
    Rng rng(20);
    for (int i = 0; i < 50; ++i) {
      const VectorX<double> y = random_tensor(rng, {1, 1, 1, 30}, 0, 1).data();
      const auto o = soft_overlap<double>(y, random_binary(rng, 30, 0.5));
      CHECK(o.intersection >= 0);
      CHECK(o.intersection <= o.union_area);
    }
  }
  SUBCASE("size mismatch") { CHECK_THROWS_AS(soft_overlap<double>(VectorX<double>::Zero(3), t), ShapeError); }
}

TEST_CASE("avg_distance_loss") {
  const VectorX<double> t = square_gt();
  CHECK(avg_distance_loss<double>(t, t) == 0);
  CHECK(avg_distance_loss<double>(VectorX<double>::Zero(64), t) == 4.0);
  VectorX<double> y = t;
  y[2 * 8 + 2] = 0.5;
  CHECK(avg_distance_loss<double>(y, t) == 0.125);
  CHECK_THROWS_AS(avg_distance_loss<double>(t, VectorX<double>::Zero(64)), std::domain_error);

  VectorX<float> g;
  avg_distance_loss<float>(t.cast<float>(), t.cast<float>(), &g);
  // d/dy = (1 - 2 y') / sqrt(A_g)
  CHECK(g[0] == doctest::Approx(0.25));
  CHECK(g[2 * 8 + 2] == doctest::Approx(-0.25));
}

TEST_CASE("avg_distance_loss equals exact pixel counting on binary inputs") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rand_int(rng, 1, 200);
    VectorX<double> y = random_binary(rng, n, rng.uniform()), t = random_binary(rng, n, rng.uniform());
    t[0] = 1;
    long inter = 0, uni = 0, gt = 0;
    for (int i = 0; i < n; ++i) {
      inter += y[i] && t[i];
      uni += y[i] || t[i];
      gt += t[i] != 0;
    }
    CHECK(avg_distance_loss<double>(y, t) == double(uni - inter) / std::sqrt(double(gt)));
  }
}

TEST_CASE("soft_iou_loss") {
  const VectorX<double> t = square_gt();
  CHECK(soft_iou_loss<double>(t, t) == 0);
  VectorX<double> disjoint = VectorX<double>::Zero(64);
  disjoint[0] = disjoint[63] = 1;
  CHECK(soft_iou_loss<double>(disjoint, t) == doctest::Approx(1.0).epsilon(1e-6));
  VectorX<double> half = t;
  for (int y = 4; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) half[y * 8 + x] = 0;
  }
  CHECK(soft_iou_loss<double>(half, t) == doctest::Approx(0.5).epsilon(1e-6));
  // Empty/empty is guarded by epsilon.
  CHECK(soft_iou_loss<double>(VectorX<double>::Zero(4), VectorX<double>::Zero(4)) == 0);
}

TEST_CASE("bce_iou_loss") {
  const VectorX<double> t = square_gt();
  CHECK(bce_iou_loss<double>(t, t) < 1e-6);
  CHECK(bce_iou_loss<double>(t, t) >= 0);
  const VectorX<double> halfp = VectorX<double>::Constant(64, 0.5);
  // lambda = 0 isolates the BCE term.
  CHECK(bce_iou_loss<double>(halfp, t, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Rng rng(22);
  for (int i = 0; i < 20; ++i) {
    const VectorX<double> y = random_tensor(rng, {1, 1, 1, 64}, 0, 1).data();
    CHECK(bce_iou_loss<double>(y, t, 1.0) == soft_iou_loss<double>(y, t));
  }
  CHECK_THROWS_AS(bce_iou_loss<double>(t, t, 1.5), std::invalid_argument);
  // The clamp keeps hard mistakes finite.
  VectorX<double> wrong = VectorX<double>::Ones(64) - t;
  CHECK(std::isfinite(bce_iou_loss<double>(wrong, t)));
}

TEST_CASE("losses are non-negative and monotone toward the ground truth") {
  Rng rng(23);
  for (LossKind kind : {LossKind::avg_distance, LossKind::soft_iou, LossKind::bce_iou}) {
    for (int trial = 0; trial < 30; ++trial) {
      const int n = rand_int(rng, 4, 60);
      VectorX<double> y = random_tensor(rng, {1, 1, 1, n}, 0, 1).data();
      VectorX<double> t = random_binary(rng, n, 0.4);
      t[0] = 1;
      const LossOptions opts{kind};
      double prev = instance_loss<double>(opts, y, t);
      CHECK(prev >= 0);
      if (kind == LossKind::bce_iou) continue;
      // Move one pixel toward its target in steps.
      const int i = static_cast<int>(rng.below(n));
      for (int s = 0; s < 5; ++s) {
        y[i] += (t[i] - y[i]) * 0.5;
        const double cur = instance_loss<double>(opts, y, t);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
      }
    }
  }
}

TEST_CASE("batch_loss is the mean of instance losses") {
  Rng rng(24);
  TensorD y = random_tensor(rng, {3, 1, 4, 4}, 0, 1), t(3, 1, 4, 4);
  for (int n = 0; n < 3; ++n) {
    for (int p = 0; p < 16; ++p) t.plane_ptr(n, 0)[p] = (p + n) % 3 == 0;
  }
  for (LossKind kind : {LossKind::avg_distance, LossKind::soft_iou, LossKind::bce_iou}) {
    double sum = 0;
    for (int n = 0; n < 3; ++n) sum += instance_loss<double>({kind}, y.sample(n).transpose(), t.sample(n).transpose());
    CHECK(batch_loss<double>({kind}, y, t) == doctest::Approx(sum / 3).epsilon(1e-12));
  }
  CHECK_THROWS_AS(batch_loss<double>({}, y, TensorD(3, 1, 4, 5)), ShapeError);
}

TEST_CASE("loss kind names") {
  for (LossKind kind : {LossKind::avg_distance, LossKind::soft_iou, LossKind::bce_iou}) {
    CHECK(loss_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(loss_kind_from_string("dice"), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(25);
  for (LossKind kind : {LossKind::avg_distance, LossKind::soft_iou, LossKind::bce_iou}) {
    for (int i = 0; i < 20; ++i) CHECK(gradcheck_loss(rng, kind) <= 1e-4);
  }
}
