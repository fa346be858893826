#include "cfseg/losses.hpp"

#include <cmath>

namespace cfseg {

template <typename Scalar>
ClassWeights ClassWeights::inverse_volume(const Tensor<Scalar>& target) {
  const Shape& s = target.shape();
  Eigen::ArrayXd w = Eigen::ArrayXd::Zero(s.c);
  for (Index b = 0; b < s.n; ++b) w += target.sample(b).colwise().sum().transpose().array().template cast<double>();
  return {1.0 / w.max(1.0)};
}

void ClassWeights::validate(Index classes) const {
  if (w.size() != classes)
    fail(ErrorCode::kShapeMismatch, "class weight count " + std::to_string(w.size()) + " != classes " +
                                        std::to_string(classes));
  if ((w < 0.0).any() || !w.isFinite().all() || w.sum() <= 0.0)
    fail(ErrorCode::kInvalidArgument, "class weights must be finite, nonnegative and not all zero");
}

template <typename Scalar>
Tensor<Scalar> onehot(std::span<const std::uint8_t> labels, Dims dims, int num_classes) {
  if (static_cast<Index>(labels.size()) != dims.count())
    fail(ErrorCode::kShapeMismatch, "label count does not match dims");
  Tensor<Scalar> out(Shape{1, num_classes, dims.z, dims.y, dims.x});
  const Index vox = dims.count();
  for (Index v = 0; v < vox; ++v) {
    const int label = labels[static_cast<std::size_t>(v)];
    if (label >= num_classes)
      fail(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) + " >= class count");
    out.channel(0, label)[v] = Scalar(1);
  }
  return out;
}

namespace {

template <typename Scalar>
void check_pair(const Tensor<Scalar>& probs, const Tensor<Scalar>& target) {
  if (!(probs.shape() == target.shape()))
    fail(ErrorCode::kShapeMismatch, "probabilities and target differ in shape");
  if (!probs.data().isFinite().all() || !target.data().isFinite().all())
    fail(ErrorCode::kInvalidArgument, "non-finite values in loss inputs");
}

struct Overlap {
  Eigen::ArrayXd intersection;
  Eigen::ArrayXd union_sum;  // sum P + sum T
};

template <typename Scalar>
Overlap overlap(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, Index b) {
  const auto p = probs.sample(b);
  const auto t = target.sample(b);
  Overlap o;
  const Index classes = probs.shape().c;
  o.intersection.resize(classes);
  o.union_sum.resize(classes);
  for (Index a = 0; a < classes; ++a) {
    o.intersection[a] = p.col(a).template cast<double>().dot(t.col(a).template cast<double>());
    o.union_sum[a] = p.col(a).template cast<double>().sum() + t.col(a).template cast<double>().sum();
  }
  return o;
}

// Softmax Jacobian-vector product: dz_c = P_c (g_c - sum_a P_a g_a) per voxel.
template <typename Scalar>
void softmax_backward(const Tensor<Scalar>& probs, Tensor<Scalar>& grad) {
  for (Index b = 0; b < probs.shape().n; ++b) {
    const auto p = probs.sample(b);
    auto g = grad.sample(b);
    const auto inner = (p.array() * g.array()).rowwise().sum().eval();
    g = (p.array() * (g.array().colwise() - inner)).matrix();
  }
}

}  // namespace

template <typename Scalar>
double msdl(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, const ClassWeights& weights, double eps) {
  check_pair(probs, target);
  weights.validate(probs.shape().c);
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "dice smoothing must be positive");
  const double wsum = weights.w.sum();
  double total = 0.0;
  for (Index b = 0; b < probs.shape().n; ++b) {
    const Overlap o = overlap(probs, target, b);
    const Eigen::ArrayXd dice = (2.0 * o.intersection + eps) / (o.union_sum + eps);
    total += 1.0 - (weights.w * dice).sum() / wsum;
  }
  return total / static_cast<double>(probs.shape().n);
}

template <typename Scalar>
Tensor<Scalar> msdl_grad(const Tensor<Scalar>& probs, const Tensor<Scalar>& target, const ClassWeights& weights,
                         double eps) {
  check_pair(probs, target);
  weights.validate(probs.shape().c);
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "dice smoothing must be positive");
  const Shape& s = probs.shape();
  const double wsum = weights.w.sum();
  const double batch = static_cast<double>(s.n);
  Tensor<Scalar> grad(s);
  for (Index b = 0; b < s.n; ++b) {
    const Overlap o = overlap(probs, target, b);
    const auto t = target.sample(b);
    auto g = grad.sample(b);
    for (Index a = 0; a < s.c; ++a) {
      // d dice_a / d P_av = (2 T_av (U_a + eps) - (2 I_a + eps)) / (U_a + eps)^2
      const double denom = o.union_sum[a] + eps;
      const double coef = -weights.w[a] / (wsum * batch);
      const auto k_t = static_cast<Scalar>(coef * 2.0 / denom);
      const auto k_0 = static_cast<Scalar>(-coef * (2.0 * o.intersection[a] + eps) / (denom * denom));
      g.col(a) = (t.col(a).array() * k_t + k_0).matrix();
    }
  }
  softmax_backward(probs, grad);
  return grad;
}

namespace {

template <typename Scalar>
Tensor<Scalar> two_channel_target(const Tensor<Scalar>& probs, const Tensor<Scalar>& target_binary) {
  const Shape& s = probs.shape();
  if (s.c != 2) fail(ErrorCode::kShapeMismatch, "binary dice expects two-channel probabilities");
  const Shape& ts = target_binary.shape();
  if (!(ts == s.with_channels(1))) fail(ErrorCode::kShapeMismatch, "binary target shape mismatch");
  Tensor<Scalar> t(s);
  for (Index b = 0; b < s.n; ++b) {
    auto m = t.sample(b);
    m.col(1) = target_binary.sample(b).col(0);
    m.col(0) = (Scalar(1) - m.col(1).array()).matrix();
  }
  return t;
}

const ClassWeights& foreground_only() {
  static const ClassWeights w{(Eigen::ArrayXd(2) << 0.0, 1.0).finished()};
  return w;
}

}  // namespace

template <typename Scalar>
double binary_dice_loss(const Tensor<Scalar>& probs, const Tensor<Scalar>& target_binary, double eps) {
  return msdl(probs, two_channel_target(probs, target_binary), foreground_only(), eps);
}

template <typename Scalar>
Tensor<Scalar> binary_dice_grad(const Tensor<Scalar>& probs, const Tensor<Scalar>& target_binary, double eps) {
  return msdl_grad(probs, two_channel_target(probs, target_binary), foreground_only(), eps);
}

#define CFSEG_INSTANTIATE_LOSSES(S)                                                                    \
  template ClassWeights ClassWeights::inverse_volume(const Tensor<S>&);                               \
  template Tensor<S> onehot(std::span<const std::uint8_t>, Dims, int);                                \
  template double msdl(const Tensor<S>&, const Tensor<S>&, const ClassWeights&, double);              \
  template Tensor<S> msdl_grad(const Tensor<S>&, const Tensor<S>&, const ClassWeights&, double);      \
  template double binary_dice_loss(const Tensor<S>&, const Tensor<S>&, double);                       \
  template Tensor<S> binary_dice_grad(const Tensor<S>&, const Tensor<S>&, double);

CFSEG_INSTANTIATE_LOSSES(float)
CFSEG_INSTANTIATE_LOSSES(double)

#undef CFSEG_INSTANTIATE_LOSSES

}  // namespace cfseg
