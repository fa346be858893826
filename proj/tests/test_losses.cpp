#include <doctest.h>

#include "cfseg/losses.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace cfseg;
using T = Tensor<double>;

namespace {

/// Straight transcription of the weighted soft Dice loss, sample by sample.
double msdl_oracle(const T& p, const T& t, const Eigen::ArrayXd& w, double eps) {
  const Shape s = p.shape();
  double total = 0.0;
  for (Index b = 0; b < s.n; ++b) {
    double acc = 0.0;
    for (Index c = 0; c < s.c; ++c) {
      double inter = 0, sp = 0, st = 0;
      for (Index v = 0; v < s.spatial(); ++v) {
        inter += p.channel(b, c)[v] * t.channel(b, c)[v];
        sp += p.channel(b, c)[v];
        st += t.channel(b, c)[v];
      }
      acc += w[c] * (2 * inter + eps) / (sp + st + eps);
    }
    total += 1.0 - acc / w.sum();
  }
  return total / static_cast<double>(s.n);
}

}  // namespace

TEST_CASE("two-voxel hand case gives 0.5") {
  T probs({1, 2, 1, 1, 2}), target({1, 2, 1, 1, 2});
  probs.data() << 0.5, 0.5, 0.5, 0.5;
  target.data() << 0, 1, 1, 0;  // class 0 = (0,1), class 1 = (1,0)
  CHECK(msdl(probs, target, ClassWeights::uniform(2), 1e-12) == doctest::Approx(0.5).epsilon(1e-11));
  CHECK(msdl(probs, target, ClassWeights::uniform(2)) == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("msdl equals the transcribed formula") {
  std::mt19937_64 gen(1);
  for (int i = 0; i < 50; ++i) {
    const auto inst = test::random_loss_instance(gen, 2 + i % 5);
    const T p = softmax_channels(inst.logits);
    CHECK(msdl(p, inst.target, inst.weights) ==
          doctest::Approx(msdl_oracle(p, inst.target, inst.weights.w, kDefaultDiceEps)).epsilon(1e-12));
  }
}

TEST_CASE("perfect and disjoint predictions") {
  std::mt19937_64 gen(2);
  const auto inst = test::random_loss_instance(gen, 4);
  CHECK(msdl(inst.target, inst.target, inst.weights) < 1e-6);
  T big({1, 3, 4, 4, 4}), tgt({1, 3, 4, 4, 4}), off({1, 3, 4, 4, 4});
  for (Index v = 0; v < 64; ++v) {
    tgt.channel(0, v % 3)[v] = 1.0;
    off.channel(0, (v + 1) % 3)[v] = 1.0;
    for (Index c = 0; c < 3; ++c) big.channel(0, c)[v] = tgt.channel(0, c)[v];
  }
  CHECK(msdl(big, tgt, ClassWeights::uniform(3)) < 1e-6);
  CHECK(msdl(off, tgt, ClassWeights::uniform(3)) >= 0.99);
}

TEST_CASE("weight scaling and class permutation leave the loss unchanged") {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 30; ++i) {
    const auto inst = test::random_loss_instance(gen, 5);
    const T p = softmax_channels(inst.logits);
    const double base = msdl(p, inst.target, inst.weights);
    for (double k : {0.5, 2.0, 8.0}) {
      ClassWeights scaled{inst.weights.w * k};
      CHECK(msdl(p, inst.target, scaled) == base);
    }
    // Rotate classes of probs, target and weights together.
    T pr(p.shape()), tr(p.shape());
    ClassWeights wr{Eigen::ArrayXd(5)};
    for (Index c = 0; c < 5; ++c) {
      const Index to = (c + 2) % 5;
      wr.w[to] = inst.weights.w[c];
      for (Index b = 0; b < p.shape().n; ++b)
        for (Index v = 0; v < p.shape().spatial(); ++v) {
          pr.channel(b, to)[v] = p.channel(b, c)[v];
          tr.channel(b, to)[v] = inst.target.channel(b, c)[v];
        }
    }
    CHECK(msdl(pr, tr, wr) == doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("msdl and binary dice gradients on 100 random instances") {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 100; ++i) {
    const auto multi = test::random_loss_instance(gen, 2 + i % 6);
    const test::GradReport rm = test::check_msdl(multi, 1e-4);
    CHECK(rm.over_tolerance == 0);
    const auto binary = test::random_loss_instance(gen, 2);
    const test::GradReport rb = test::check_binary_dice(binary, 1e-4);
    CHECK(rb.over_tolerance == 0);
  }
}

TEST_CASE("binary dice is msdl on the foreground channel") {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 20; ++i) {
    const auto inst = test::random_loss_instance(gen, 2);
    const T p = softmax_channels(inst.logits);
    T mask(p.shape().with_channels(1));
    for (Index b = 0; b < p.shape().n; ++b)
      for (Index v = 0; v < p.shape().spatial(); ++v) mask.channel(b, 0)[v] = inst.target.channel(b, 1)[v];
    ClassWeights fg{Eigen::ArrayXd(2)};
    fg.w << 0.0, 1.0;
    CHECK(binary_dice_loss(p, mask) == doctest::Approx(msdl(p, inst.target, fg)).epsilon(1e-14));
  }
}

TEST_CASE("one-hot encoding and weight helpers") {
  LabelVolume l({3, 1, 1}, {1, 1, 1});
  l.voxels << 0, 13, 6;
  const Tensor<float> oh = onehot<float>(l, kNumClasses);
  CHECK(oh.shape() == Shape{1, 14, 1, 1, 3});
  CHECK(oh.data().sum() == 3.0f);
  CHECK(oh(0, 0, 0, 0, 0) == 1.0f);
  CHECK(oh(0, 13, 0, 0, 1) == 1.0f);
  CHECK(oh(0, 6, 0, 0, 2) == 1.0f);
  CHECK_ERROR_CODE(onehot<float>(l, 7), ErrorCode::kLabelOutOfRange);
  const ClassWeights inv = ClassWeights::inverse_volume(oh);
  CHECK(inv.w[0] == 1.0);
  CHECK(inv.w[1] == 1.0);  // absent classes clamp to 1
  CHECK_ERROR_CODE(ClassWeights{Eigen::ArrayXd::Zero(3)}.validate(3), ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(ClassWeights::uniform(3).validate(4), ErrorCode::kShapeMismatch);
}

TEST_CASE("loss input validation") {
  T p({1, 2, 1, 1, 2}), t({1, 2, 1, 1, 2});
  p.data() << 0.5, std::nan(""), 0.5, 0.5;
  CHECK_ERROR_CODE(msdl(p, t, ClassWeights::uniform(2)), ErrorCode::kInvalidArgument);
  T other({1, 3, 1, 1, 2});
  CHECK_ERROR_CODE(msdl(other, t, ClassWeights::uniform(3)), ErrorCode::kShapeMismatch);
}
