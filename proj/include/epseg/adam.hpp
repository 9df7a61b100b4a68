#pragma once

#include "epseg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace epseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// First/second moment accumulators, one pair per parameter tensor.
template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::vector<VectorX<Scalar>> m;
  std::vector<VectorX<Scalar>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update over a parameter list.
///
/// Moments are allocated lazily on the first step. A non-finite gradient throws
/// NonFiniteGradient before anything is modified.
template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const std::vector<const Tensor<Scalar>*>& grads,
               AdamState<Scalar>& state);

template <typename Scalar>
void adam_step(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamState<Scalar>& state) {
  adam_step<Scalar>({&param}, {&grad}, state);
}

}  // namespace epseg
