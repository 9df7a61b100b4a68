#include "epseg/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace epseg {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::avg_distance: return "avg_distance";
    case LossKind::soft_iou: return "soft_iou";
    case LossKind::bce_iou: return "bce_iou";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "avg_distance") return LossKind::avg_distance;
  if (name == "soft_iou") return LossKind::soft_iou;
  if (name == "bce_iou") return LossKind::bce_iou;
  throw std::invalid_argument("unknown loss '" + name + "' (expected avg_distance|soft_iou|bce_iou)");
}

namespace {

template <typename Scalar>
void check_sizes(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true) {
  if (y.size() != y_true.size()) {
    throw ShapeError("loss: prediction has " + std::to_string(y.size()) + " pixels, ground truth " +
                     std::to_string(y_true.size()));
  }
}

}  // namespace

template <typename Scalar>
SoftOverlap soft_overlap(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true) {
  check_sizes<Scalar>(y, y_true);
  const Scalar inter = y.dot(y_true);
  const Scalar sum_y = y.sum();
  const Scalar sum_t = y_true.sum();
  return {static_cast<double>(inter), static_cast<double>(sum_y + sum_t - inter), static_cast<double>(sum_t)};
}

template <typename Scalar>
Scalar avg_distance_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true, VectorX<Scalar>* grad) {
  check_sizes<Scalar>(y, y_true);
  const Scalar gt_area = y_true.sum();
  if (!(gt_area > Scalar(0))) throw std::domain_error("avg_distance_loss: empty ground-truth mask");
  const Scalar len = std::sqrt(gt_area);
  // union - intersection = sum(y + y' - 2 y y')
  const Scalar diff = y.sum() + gt_area - Scalar(2) * y.dot(y_true);
  if (grad) *grad = ((Scalar(1) - Scalar(2) * y_true.array()) / len).matrix();
  return diff / len;
}

template <typename Scalar>
Scalar soft_iou_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true, VectorX<Scalar>* grad) {
  check_sizes<Scalar>(y, y_true);
  const Scalar eps = static_cast<Scalar>(kSoftIouEpsilon);
  const Scalar inter = y.dot(y_true) + eps;
  const Scalar uni = y.sum() + y_true.sum() - y.dot(y_true) + eps;
  if (grad) {
    // d(I/U)/dy = (y' U - I (1 - y')) / U^2
    *grad = (-(y_true.array() * uni - inter * (Scalar(1) - y_true.array())) / (uni * uni)).matrix();
  }
  return Scalar(1) - inter / uni;
}

template <typename Scalar>
Scalar bce_iou_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true, double iou_weight,
                    VectorX<Scalar>* grad) {
  if (iou_weight < 0 || iou_weight > 1) throw std::invalid_argument("bce_iou_loss: weight must be in [0, 1]");
  const Scalar lambda = static_cast<Scalar>(iou_weight);
  VectorX<Scalar> iou_grad;
  const Scalar iou = soft_iou_loss<Scalar>(y, y_true, grad ? &iou_grad : nullptr);

  const Scalar lo = static_cast<Scalar>(kBceClamp), hi = Scalar(1) - static_cast<Scalar>(kBceClamp);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(y.size());
  const auto yc = y.array().max(lo).min(hi);
  const auto t = y_true.array();
  const Scalar bce = -(t * yc.log() + (Scalar(1) - t) * (Scalar(1) - yc).log()).sum() * inv_n;
  if (grad) {
    const auto inside = (y.array() >= lo && y.array() <= hi);
    const auto bce_grad = inside.select((-(t / yc) + (Scalar(1) - t) / (Scalar(1) - yc)) * inv_n, Scalar(0));
    *grad = (lambda * iou_grad.array() + (Scalar(1) - lambda) * bce_grad).matrix();
  }
  return lambda * iou + (Scalar(1) - lambda) * bce;
}

template <typename Scalar>
Scalar instance_loss(const LossOptions& options, const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true,
                     VectorX<Scalar>* grad) {
  switch (options.kind) {
    case LossKind::avg_distance: return avg_distance_loss<Scalar>(y, y_true, grad);
    case LossKind::soft_iou: return soft_iou_loss<Scalar>(y, y_true, grad);
    case LossKind::bce_iou: return bce_iou_loss<Scalar>(y, y_true, options.iou_weight, grad);
  }
  throw std::invalid_argument("instance_loss: unknown loss kind");
}

template <typename Scalar>
Scalar batch_loss(const LossOptions& options, const Tensor<Scalar>& probs, const Tensor<Scalar>& gt,
                  Tensor<Scalar>* dprobs) {
  if (probs.shape() != gt.shape() || probs.c() != 1) {
    throw ShapeError("batch_loss: predictions " + to_string(probs.shape()) + " vs ground truth " +
                     to_string(gt.shape()) + " (expected matching N x 1 x H x W)");
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(probs.shape().plane());
  if (dprobs) *dprobs = Tensor<Scalar>(probs.shape());
  Scalar total = 0;
  VectorX<Scalar> grad;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(probs.n());
  for (int n = 0; n < probs.n(); ++n) {
    const auto y = probs.data().segment(n * plane, plane);
    const auto t = gt.data().segment(n * plane, plane);
    total += instance_loss<Scalar>(options, y, t, dprobs ? &grad : nullptr);
    if (dprobs) dprobs->data().segment(n * plane, plane) = grad * inv_n;
  }
  return total * inv_n;
}

#define EPSEG_INSTANTIATE_LOSS(S)                                                                        \
  template SoftOverlap soft_overlap<S>(const VectorRef<S>&, const VectorRef<S>&);                         \
  template S avg_distance_loss<S>(const VectorRef<S>&, const VectorRef<S>&, VectorX<S>*);                 \
  template S soft_iou_loss<S>(const VectorRef<S>&, const VectorRef<S>&, VectorX<S>*);                     \
  template S bce_iou_loss<S>(const VectorRef<S>&, const VectorRef<S>&, double, VectorX<S>*);              \
  template S instance_loss<S>(const LossOptions&, const VectorRef<S>&, const VectorRef<S>&, VectorX<S>*); \
  template S batch_loss<S>(const LossOptions&, const Tensor<S>&, const Tensor<S>&, Tensor<S>*);

EPSEG_INSTANTIATE_LOSS(float)
EPSEG_INSTANTIATE_LOSS(double)

}  // namespace epseg
