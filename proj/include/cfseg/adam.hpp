#pragma once

#include <cmath>
#include <cstdint>

#include "cfseg/unet.hpp"

namespace cfseg {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments mirroring the trainable parameters.
template <typename Scalar>
struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  NetworkParams<Scalar> m;
  NetworkParams<Scalar> v;

  static AdamState init(const NetworkParams<Scalar>& params, AdamHyper hyper = {}) {
    AdamState s;
    s.hyper = hyper;
    s.m = params.zeros_like_trainable();
    s.v = params.zeros_like_trainable();
    return s;
  }
};

/// Bias-corrected Adam:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename Scalar>
void adam_step(NetworkParams<Scalar>& params, const NetworkParams<Scalar>& grads, AdamState<Scalar>& state) {
  if (grads.entries().size() != state.m.entries().size())
    fail(ErrorCode::kShapeMismatch, "gradient set does not match optimizer state");
  for (const auto& g : grads.entries())
    if (g.value.size() != params[g.name].size() || g.value.size() != state.m[g.name].size())
      fail(ErrorCode::kShapeMismatch, "gradient shape mismatch for " + g.name);

  ++state.step;
  const AdamHyper& h = state.hyper;
  const auto t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(h.beta1);
  const auto b2 = static_cast<Scalar>(h.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(h.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(h.beta2, t));
  const auto lr = static_cast<Scalar>(h.lr);
  const auto eps = static_cast<Scalar>(h.eps);
  for (const auto& g : grads.entries()) {
    auto& m = state.m[g.name];
    auto& v = state.v[g.name];
    m = b1 * m + (Scalar(1) - b1) * g.value;
    v = b2 * v + (Scalar(1) - b2) * g.value.square();
    params[g.name] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

}  // namespace cfseg
