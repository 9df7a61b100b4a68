#include "epseg/adam.hpp"

#include <cmath>

namespace epseg {

template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const std::vector<const Tensor<Scalar>*>& grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (!(state.config.lr > 0)) throw std::invalid_argument("adam_step: learning rate must be > 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw ShapeError("adam_step: gradient " + to_string(grads[i]->shape()) + " does not match parameter " +
                       to_string(params[i]->shape()));
    }
    if (!grads[i]->all_finite()) {
      throw NonFiniteGradient("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(VectorX<Scalar>::Zero(p->size()));
      state.v.push_back(VectorX<Scalar>::Zero(p->size()));
    }
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state was built for a different parameter list");
  }

  const auto& cfg = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const Scalar c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const Scalar lr = static_cast<Scalar>(cfg.lr), eps = static_cast<Scalar>(cfg.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i]->data().array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params[i]->data().array() -= lr * (m * c1) / ((v * c2).sqrt() + eps);
  }
}

template void adam_step(const std::vector<Tensor<float>*>&, const std::vector<const Tensor<float>*>&,
                        AdamState<float>&);
template void adam_step(const std::vector<Tensor<double>*>&, const std::vector<const Tensor<double>*>&,
                        AdamState<double>&);

}  // namespace epseg
