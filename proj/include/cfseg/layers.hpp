#pragma once

#include <cstdint>
#include <vector>

#include "cfseg/tensor.hpp"

// Building blocks of the 3D U-Net. Every convolution is expressed as a sum of
// GEMMs over shifted views of the input, so all heavy lifting goes through
// Eigen's matrix product kernels.
//
// Weight layouts (all column-major blocks of in x out):
//   conv3x3x3 : 27 taps, tap k = ((dz+1)*3 + (dy+1))*3 + (dx+1)
//   conv1x1x1 : one block
//   upconv2   : 8 taps, tap k = (oz*2 + oy)*2 + ox for output offset (oz, oy, ox)

namespace cfseg::layers {

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Same-padded 3x3x3 convolution without bias.
template <typename Scalar>
Tensor<Scalar> conv3_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, Index out_channels);

/// Accumulates into grad_weight; writes grad_in when non-null.
template <typename Scalar>
void conv3_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                    Vec<Scalar>& grad_weight, Tensor<Scalar>* grad_in);

template <typename Scalar>
Tensor<Scalar> conv1_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Vec<Scalar>& bias);

template <typename Scalar>
void conv1_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                    Vec<Scalar>& grad_weight, Vec<Scalar>& grad_bias, Tensor<Scalar>* grad_in);

/// 2x2x2 transposed convolution with stride 2 (doubles each spatial dim).
template <typename Scalar>
Tensor<Scalar> upconv2_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Vec<Scalar>& bias);

template <typename Scalar>
void upconv2_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                      Vec<Scalar>& grad_weight, Vec<Scalar>& grad_bias, Tensor<Scalar>& grad_in);

/// 2x2x2 max pooling, stride 2. `argmax` receives the winning input offset
/// (within its sample/channel block) of every output voxel.
template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& in, std::vector<std::int32_t>& argmax);

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Shape& in_shape, const std::vector<std::int32_t>& argmax,
                                 const Tensor<Scalar>& grad_out);

struct BatchNormSettings {
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> xhat;
  Vec<Scalar> invstd;
  bool training = true;
};

template <typename Scalar>
struct BatchStats {
  Vec<Scalar> mean;
  Vec<Scalar> unbiased_var;
};

/// Per-channel batch normalization followed by ReLU. Training mode normalizes
/// with batch statistics (reported through `stats`); eval mode uses the
/// running statistics.
template <typename Scalar>
Tensor<Scalar> bn_relu_forward(const Tensor<Scalar>& x, const Vec<Scalar>& gamma, const Vec<Scalar>& beta,
                               const Vec<Scalar>& running_mean, const Vec<Scalar>& running_var, bool training,
                               const BatchNormSettings& settings, BatchNormCache<Scalar>* cache,
                               BatchStats<Scalar>* stats = nullptr);

template <typename Scalar>
void update_running_stats(Vec<Scalar>& running_mean, Vec<Scalar>& running_var, const BatchStats<Scalar>& stats,
                          const BatchNormSettings& settings);

/// `out` is the forward output (used for the ReLU mask).
template <typename Scalar>
Tensor<Scalar> bn_relu_backward(const BatchNormCache<Scalar>& cache, const Vec<Scalar>& gamma,
                                const Tensor<Scalar>& out, const Tensor<Scalar>& grad_out,
                                Vec<Scalar>& grad_gamma, Vec<Scalar>& grad_beta);

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Splits a gradient over concatenated channels back into its two parts.
template <typename Scalar>
void split_channels(const Tensor<Scalar>& joined, Index first_channels, Tensor<Scalar>& a,
                    Tensor<Scalar>& b);

}  // namespace cfseg::layers
