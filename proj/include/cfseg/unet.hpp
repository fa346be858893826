#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfseg/layers.hpp"
#include "cfseg/rng.hpp"
#include "cfseg/tensor.hpp"

namespace cfseg {

/// 3D U-Net layout. With the default four levels the encoder holds 8
/// conv3-BN-ReLU blocks (two per level) and the decoder 10 blocks: three
/// 2x2x2 up-convolutions, six conv3-BN-ReLU blocks and a 1x1x1 projection.
struct UNetConfig {
  int in_channels = 1;
  int out_channels = 14;
  int levels = 4;
  int base_width = 16;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  int width(int level) const { return base_width << level; }
  /// Every spatial input dim must be a multiple of this.
  Index divisor() const { return Index{1} << (levels - 1); }
  void validate() const;
  void validate_input(const Shape& shape) const;
  bool operator==(const UNetConfig&) const = default;
};

template <typename Scalar>
struct ParamEntry {
  std::string name;
  std::vector<Index> shape;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> value;
  bool trainable = true;
};

/// Named parameter arrays in creation order.
template <typename Scalar>
class NetworkParams {
 public:
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Vec& add(const std::string& name, std::vector<Index> shape, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Vec& operator[](const std::string& name) { return entry(name).value; }
  const Vec& operator[](const std::string& name) const { return entry(name).value; }
  ParamEntry<Scalar>& entry(const std::string& name);
  const ParamEntry<Scalar>& entry(const std::string& name) const;

  std::vector<ParamEntry<Scalar>>& entries() { return entries_; }
  const std::vector<ParamEntry<Scalar>>& entries() const { return entries_; }

  Index trainable_count() const;
  /// Same trainable names and shapes, zero-filled; running statistics dropped.
  NetworkParams zeros_like_trainable() const;
  bool all_finite() const;

  template <typename T>
  NetworkParams<T> cast() const {
    NetworkParams<T> out;
    for (const auto& e : entries_) out.add(e.name, e.shape, e.trainable) = e.value.template cast<T>();
    return out;
  }

 private:
  std::vector<ParamEntry<Scalar>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
struct ConvBlockTrace {
  Tensor<Scalar> in;
  layers::BatchNormCache<Scalar> bn;
  Tensor<Scalar> out;
};

/// Activations recorded by a forward pass for the matching backward pass.
template <typename Scalar>
struct ForwardTrace {
  bool valid = false;
  Shape input_shape;
  std::vector<ConvBlockTrace<Scalar>> encoder;  // levels * 2
  std::vector<ConvBlockTrace<Scalar>> decoder;  // (levels - 1) * 2, index by level
  std::vector<Shape> pool_in;                   // per level >= 1
  std::vector<std::vector<std::int32_t>> pool_argmax;
  std::vector<Tensor<Scalar>> up_in;            // per decoder level
  Tensor<Scalar> head_in;
};

enum class Mode { kTrain, kEval };

/// He fan-in normal kernels, zero biases, BN scale 1 / shift 0, running
/// statistics (0, 1).
template <typename Scalar>
NetworkParams<Scalar> init_params(const UNetConfig& config, SeededRng& rng);

/// Logits with the input's spatial dims. Training mode uses batch statistics
/// and updates the running statistics stored in `params`.
template <typename Scalar>
Tensor<Scalar> forward(const UNetConfig& config, NetworkParams<Scalar>& params, const Tensor<Scalar>& input,
                       Mode mode, ForwardTrace<Scalar>* trace = nullptr);

/// Eval-mode forward; never mutates the parameters.
template <typename Scalar>
Tensor<Scalar> forward(const UNetConfig& config, const NetworkParams<Scalar>& params,
                       const Tensor<Scalar>& input);

/// Gradients of every trainable parameter given dLoss/dLogits.
template <typename Scalar>
NetworkParams<Scalar> backward(const UNetConfig& config, const NetworkParams<Scalar>& params,
                               const ForwardTrace<Scalar>& trace, const Tensor<Scalar>& grad_logits);

/// Per-voxel softmax over channels, stabilised by max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits);

/// Per-voxel argmax over channels of one sample.
template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> argmax_channels(const Tensor<Scalar>& t, Index sample);

}  // namespace cfseg
