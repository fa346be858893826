#pragma once

#include <cstdint>
#include <span>

#include "cfseg/tensor.hpp"

namespace cfseg {

/// Nonnegative per-class weights (background first), not all zero.
struct ClassWeights {
  Eigen::ArrayXd w;

  static ClassWeights uniform(Index classes) { return {Eigen::ArrayXd::Ones(classes)}; }
  /// w_a = 1 / max(1, voxels of class a in the target); balances class sizes.
  template <typename Scalar>
  static ClassWeights inverse_volume(const Tensor<Scalar>& target_onehot);
  void validate(Index classes) const;
};

inline constexpr double kDefaultDiceEps = 1e-5;

/// Indicator tensor of shape (1, classes, z, y, x).
template <typename Scalar>
Tensor<Scalar> onehot(std::span<const std::uint8_t> labels, Dims dims, int num_classes);

template <typename Scalar>
Tensor<Scalar> onehot(const LabelVolume& labels, int num_classes) {
  return onehot<Scalar>(std::span<const std::uint8_t>(labels.voxels.data(), labels.voxels.size()), labels.dims,
                        num_classes);
}

/// Weighted soft Dice loss over all classes, averaged over the batch:
///   1 - (1 / sum w) * sum_a w_a (2 sum_v P T + eps) / (sum_v P + sum_v T + eps)
template <typename Scalar>
double msdl(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, const ClassWeights& weights,
            double eps = kDefaultDiceEps);

/// Gradient of msdl with respect to the pre-softmax logits.
template <typename Scalar>
Tensor<Scalar> msdl_grad(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, const ClassWeights& weights,
                         double eps = kDefaultDiceEps);

/// Dice loss on the foreground channel of a two-channel prediction.
/// `target_binary` has one channel with values in {0, 1}.
template <typename Scalar>
double binary_dice_loss(const Tensor<Scalar>& probs, const Tensor<Scalar>& target_binary,
                        double eps = kDefaultDiceEps);

template <typename Scalar>
Tensor<Scalar> binary_dice_grad(const Tensor<Scalar>& probs, const Tensor<Scalar>& target_binary,
                                double eps = kDefaultDiceEps);

}  // namespace cfseg
