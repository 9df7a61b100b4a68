#pragma once

#include "epseg/tensor.hpp"

#include <string>

namespace epseg {

enum class LossKind { avg_distance, soft_iou, bce_iou };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossOptions {
  LossKind kind = LossKind::avg_distance;
  // Weight of the soft-IoU term in bce_iou; BCE gets (1 - weight).
  double iou_weight = 0.5;
};

inline constexpr double kSoftIouEpsilon = 1e-6;
inline constexpr double kBceClamp = 1e-7;

/// Soft set areas of one instance: intersection sum(y*y'), union sum(y + y' - y*y')
/// and ground-truth area sum(y'). Exact pixel counts when y is binary.
struct SoftOverlap {
  double intersection = 0;
  double union_area = 0;
  double gt_area = 0;
};

template <typename Scalar>
SoftOverlap soft_overlap(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true);

// Each loss optionally writes dLoss/dy into `grad` (resized to y.size()).

/// (union - intersection) / sqrt(gt_area). Throws std::domain_error on an empty ground truth.
template <typename Scalar>
Scalar avg_distance_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true,
                         VectorX<Scalar>* grad = nullptr);

template <typename Scalar>
Scalar soft_iou_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true, VectorX<Scalar>* grad = nullptr);

// iou_weight * soft IoU + (1 - iou_weight) * mean per-pixel BCE.
template <typename Scalar>
Scalar bce_iou_loss(const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true, double iou_weight = 0.5,
                    VectorX<Scalar>* grad = nullptr);

template <typename Scalar>
Scalar instance_loss(const LossOptions& options, const VectorRef<Scalar>& y, const VectorRef<Scalar>& y_true,
                     VectorX<Scalar>* grad = nullptr);

/// Mean instance loss over a batch of N x 1 x H x W probabilities.
template <typename Scalar>
Scalar batch_loss(const LossOptions& options, const Tensor<Scalar>& probs, const Tensor<Scalar>& gt,
                  Tensor<Scalar>* dprobs = nullptr);

}  // namespace epseg
