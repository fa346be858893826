#include "cfseg/unet.hpp"

#include <cmath>

namespace cfseg {

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1)
    fail(ErrorCode::kInvalidArgument, "U-Net channel counts must be >= 1");
  if (levels < 1 || levels > 8) fail(ErrorCode::kInvalidArgument, "U-Net levels must be in 1..8");
  if (base_width < 1) fail(ErrorCode::kInvalidArgument, "U-Net base width must be >= 1");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0))
    fail(ErrorCode::kInvalidArgument, "bad batch-norm settings");
}

void UNetConfig::validate_input(const Shape& s) const {
  if (s.n < 1 || s.c != in_channels)
    fail(ErrorCode::kShapeMismatch, "input must have batch >= 1 and " + std::to_string(in_channels) +
                                        " channels, got " + std::to_string(s.c));
  const Index div = divisor();
  if (s.d < 1 || s.h < 1 || s.w < 1 || s.d % div || s.h % div || s.w % div)
    fail(ErrorCode::kShapeMismatch, "input spatial dims must be positive multiples of " + std::to_string(div));
}

template <typename Scalar>
typename NetworkParams<Scalar>::Vec& NetworkParams<Scalar>::add(const std::string& name,
                                                               std::vector<Index> shape, bool trainable) {
  if (contains(name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  Index n = 1;
  for (Index d : shape) n *= d;
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(shape), Vec::Zero(n), trainable});
  return entries_.back().value;
}

template <typename Scalar>
ParamEntry<Scalar>& NetworkParams<Scalar>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::kCheckpointMismatch, "unknown parameter " + name);
  return entries_[it->second];
}

template <typename Scalar>
const ParamEntry<Scalar>& NetworkParams<Scalar>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::kCheckpointMismatch, "unknown parameter " + name);
  return entries_[it->second];
}

template <typename Scalar>
Index NetworkParams<Scalar>::trainable_count() const {
  Index n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

template <typename Scalar>
NetworkParams<Scalar> NetworkParams<Scalar>::zeros_like_trainable() const {
  NetworkParams out;
  for (const auto& e : entries_)
    if (e.trainable) out.add(e.name, e.shape, true);
  return out;
}

template <typename Scalar>
bool NetworkParams<Scalar>::all_finite() const {
  for (const auto& e : entries_)
    if (!e.value.isFinite().all()) return false;
  return true;
}

namespace {

std::string block(const char* path, int level, int j) {
  return std::string(path) + std::to_string(level) + ".conv" + std::to_string(j);
}
std::string norm(const char* path, int level, int j) {
  return std::string(path) + std::to_string(level) + ".bn" + std::to_string(j);
}

// Creates parameters in a fixed order; `visit` sees (name, shape, fan_in, kind).
template <typename Scalar, typename Init>
NetworkParams<Scalar> build_params(const UNetConfig& c, Init&& init) {
  NetworkParams<Scalar> p;
  auto conv3 = [&](const std::string& name, Index cin, Index cout) {
    init(p.add(name + ".weight", {3, 3, 3, cout, cin}), static_cast<double>(27 * cin));
  };
  auto bn = [&](const std::string& name, Index ch) {
    p.add(name + ".gamma", {ch}).setOnes();
    p.add(name + ".beta", {ch});
    p.add(name + ".running_mean", {ch}, false);
    p.add(name + ".running_var", {ch}, false).setOnes();
  };
  for (int l = 0; l < c.levels; ++l) {
    const Index cin = l == 0 ? c.in_channels : c.width(l - 1);
    conv3(block("enc", l, 0), cin, c.width(l));
    bn(norm("enc", l, 0), c.width(l));
    conv3(block("enc", l, 1), c.width(l), c.width(l));
    bn(norm("enc", l, 1), c.width(l));
  }
  for (int l = c.levels - 2; l >= 0; --l) {
    const std::string up = "up" + std::to_string(l);
    // Each output voxel of a stride-2 transposed conv sees exactly one tap.
    init(p.add(up + ".weight", {2, 2, 2, c.width(l), c.width(l + 1)}), static_cast<double>(c.width(l + 1)));
    p.add(up + ".bias", {c.width(l)});
    conv3(block("dec", l, 0), 2 * c.width(l), c.width(l));
    bn(norm("dec", l, 0), c.width(l));
    conv3(block("dec", l, 1), c.width(l), c.width(l));
    bn(norm("dec", l, 1), c.width(l));
  }
  init(p.add("head.weight", {c.out_channels, c.width(0)}), static_cast<double>(c.width(0)));
  p.add("head.bias", {c.out_channels});
  return p;
}

// `stats_sink` receives running-statistic updates; null means eval mode.
template <typename Scalar>
Tensor<Scalar> conv_block_forward(const UNetConfig& c, const NetworkParams<Scalar>& p,
                                  NetworkParams<Scalar>* stats_sink, const std::string& conv,
                                  const std::string& bn, Index out_channels, const Tensor<Scalar>& in,
                                  ConvBlockTrace<Scalar>* trace) {
  Tensor<Scalar> y = layers::conv3_forward(in, p[conv + ".weight"], out_channels);
  const layers::BatchNormSettings settings{c.bn_momentum, c.bn_eps};
  layers::BatchStats<Scalar> stats;
  const bool training = stats_sink != nullptr;
  Tensor<Scalar> out = layers::bn_relu_forward(y, p[bn + ".gamma"], p[bn + ".beta"], p[bn + ".running_mean"],
                                               p[bn + ".running_var"], training, settings,
                                               trace ? &trace->bn : nullptr, &stats);
  if (training)
    layers::update_running_stats((*stats_sink)[bn + ".running_mean"], (*stats_sink)[bn + ".running_var"], stats,
                                 settings);
  if (trace) {
    trace->in = in;
    trace->out = out;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv_block_backward(const NetworkParams<Scalar>& p, NetworkParams<Scalar>& g,
                                   const std::string& conv, const std::string& bn,
                                   const ConvBlockTrace<Scalar>& t, const Tensor<Scalar>& grad_out,
                                   bool need_input_grad) {
  Tensor<Scalar> gy = layers::bn_relu_backward(t.bn, p[bn + ".gamma"], t.out, grad_out, g[bn + ".gamma"],
                                               g[bn + ".beta"]);
  Tensor<Scalar> gin;
  layers::conv3_backward(t.in, p[conv + ".weight"], gy, g[conv + ".weight"],
                         need_input_grad ? &gin : nullptr);
  return gin;
}

template <typename Scalar>
Tensor<Scalar> run_forward(const UNetConfig& c, const NetworkParams<Scalar>& p, const Tensor<Scalar>& input,
                           NetworkParams<Scalar>* stats_sink, ForwardTrace<Scalar>* trace) {
  c.validate();
  c.validate_input(input.shape());
  const int L = c.levels;
  if (trace) {
    *trace = ForwardTrace<Scalar>{};
    trace->input_shape = input.shape();
    trace->encoder.resize(static_cast<std::size_t>(2 * L));
    trace->decoder.resize(static_cast<std::size_t>(2 * std::max(L - 1, 0)));
    trace->pool_in.resize(static_cast<std::size_t>(L));
    trace->pool_argmax.resize(static_cast<std::size_t>(L));
    trace->up_in.resize(static_cast<std::size_t>(std::max(L - 1, 0)));
  }
  auto enc_trace = [&](int l, int j) {
    return trace ? &trace->encoder[static_cast<std::size_t>(2 * l + j)] : nullptr;
  };
  auto dec_trace = [&](int l, int j) {
    return trace ? &trace->decoder[static_cast<std::size_t>(2 * l + j)] : nullptr;
  };

  std::vector<Tensor<Scalar>> skips(static_cast<std::size_t>(L));
  Tensor<Scalar> x = input;
  for (int l = 0; l < L; ++l) {
    if (l > 0) {
      std::vector<std::int32_t> argmax;
      const Shape in_shape = x.shape();
      x = layers::maxpool2_forward(x, argmax);
      if (trace) {
        trace->pool_in[static_cast<std::size_t>(l)] = in_shape;
        trace->pool_argmax[static_cast<std::size_t>(l)] = std::move(argmax);
      }
    }
    x = conv_block_forward(c, p, stats_sink, block("enc", l, 0), norm("enc", l, 0), c.width(l), x, enc_trace(l, 0));
    x = conv_block_forward(c, p, stats_sink, block("enc", l, 1), norm("enc", l, 1), c.width(l), x, enc_trace(l, 1));
    if (l < L - 1) skips[static_cast<std::size_t>(l)] = x;
  }
  for (int l = L - 2; l >= 0; --l) {
    const std::string up = "up" + std::to_string(l);
    if (trace) trace->up_in[static_cast<std::size_t>(l)] = x;
    Tensor<Scalar> u = layers::upconv2_forward(x, p[up + ".weight"], p[up + ".bias"]);
    x = layers::concat_channels(u, skips[static_cast<std::size_t>(l)]);
    x = conv_block_forward(c, p, stats_sink, block("dec", l, 0), norm("dec", l, 0), c.width(l), x, dec_trace(l, 0));
    x = conv_block_forward(c, p, stats_sink, block("dec", l, 1), norm("dec", l, 1), c.width(l), x, dec_trace(l, 1));
  }
  Tensor<Scalar> logits = layers::conv1_forward(x, p["head.weight"], p["head.bias"]);
  if (trace) {
    trace->head_in = std::move(x);
    trace->valid = true;
  }
  return logits;
}

}  // namespace

template <typename Scalar>
NetworkParams<Scalar> init_params(const UNetConfig& config, SeededRng& rng) {
  config.validate();
  return build_params<Scalar>(config, [&](auto& w, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(sd * rng.normal());
  });
}

template <typename Scalar>
Tensor<Scalar> forward(const UNetConfig& config, NetworkParams<Scalar>& params, const Tensor<Scalar>& input,
                       Mode mode, ForwardTrace<Scalar>* trace) {
  return run_forward(config, params, input, mode == Mode::kTrain ? &params : nullptr, trace);
}

template <typename Scalar>
Tensor<Scalar> forward(const UNetConfig& config, const NetworkParams<Scalar>& params,
                       const Tensor<Scalar>& input) {
  return run_forward<Scalar>(config, params, input, nullptr, nullptr);
}

template <typename Scalar>
NetworkParams<Scalar> backward(const UNetConfig& c, const NetworkParams<Scalar>& p,
                               const ForwardTrace<Scalar>& t, const Tensor<Scalar>& grad_logits) {
  if (!t.valid) fail(ErrorCode::kMissingTrace, "backward called without a recorded forward trace");
  const int L = c.levels;
  if (t.encoder.size() != static_cast<std::size_t>(2 * L))
    fail(ErrorCode::kMissingTrace, "forward trace does not match the configuration");
  NetworkParams<Scalar> g = p.zeros_like_trainable();

  Tensor<Scalar> grad;
  layers::conv1_backward(t.head_in, p["head.weight"], grad_logits, g["head.weight"], g["head.bias"], &grad);

  std::vector<Tensor<Scalar>> skip_grads(static_cast<std::size_t>(L));
  for (int l = 0; l <= L - 2; ++l) {
    const auto dt = [&](int j) -> const ConvBlockTrace<Scalar>& { return t.decoder[static_cast<std::size_t>(2 * l + j)]; };
    grad = conv_block_backward(p, g, block("dec", l, 1), norm("dec", l, 1), dt(1), grad, true);
    grad = conv_block_backward(p, g, block("dec", l, 0), norm("dec", l, 0), dt(0), grad, true);
    Tensor<Scalar> grad_up;
    layers::split_channels(grad, c.width(l), grad_up, skip_grads[static_cast<std::size_t>(l)]);
    const std::string up = "up" + std::to_string(l);
    layers::upconv2_backward(t.up_in[static_cast<std::size_t>(l)], p[up + ".weight"], grad_up, g[up + ".weight"],
                             g[up + ".bias"], grad);
  }
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) grad.data() += skip_grads[static_cast<std::size_t>(l)].data();
    const auto et = [&](int j) -> const ConvBlockTrace<Scalar>& { return t.encoder[static_cast<std::size_t>(2 * l + j)]; };
    grad = conv_block_backward(p, g, block("enc", l, 1), norm("enc", l, 1), et(1), grad, true);
    grad = conv_block_backward(p, g, block("enc", l, 0), norm("enc", l, 0), et(0), grad, l > 0);
    if (l > 0)
      grad = layers::maxpool2_backward(t.pool_in[static_cast<std::size_t>(l)], t.pool_argmax[static_cast<std::size_t>(l)], grad);
  }
  return g;
}

template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  const Shape& s = logits.shape();
  Tensor<Scalar> out(s);
  for (Index b = 0; b < s.n; ++b) {
    const auto in = logits.sample(b);
    auto o = out.sample(b);
    o = (in.colwise() - in.rowwise().maxCoeff()).array().exp().matrix();
    o.array().colwise() /= o.rowwise().sum().array();
  }
  return out;
}

template <typename Scalar>
Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> argmax_channels(const Tensor<Scalar>& t, Index sample) {
  const auto m = t.sample(sample);
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> out(m.rows());
  for (Index v = 0; v < m.rows(); ++v) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(v, c) > m(v, best)) best = c;
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

#define CFSEG_INSTANTIATE_UNET(S)                                                                        \
  template class NetworkParams<S>;                                                                       \
  template NetworkParams<S> init_params(const UNetConfig&, SeededRng&);                                  \
  template Tensor<S> forward(const UNetConfig&, NetworkParams<S>&, const Tensor<S>&, Mode,               \
                             ForwardTrace<S>*);                                                          \
  template Tensor<S> forward(const UNetConfig&, const NetworkParams<S>&, const Tensor<S>&);              \
  template NetworkParams<S> backward(const UNetConfig&, const NetworkParams<S>&, const ForwardTrace<S>&, \
                                     const Tensor<S>&);                                                  \
  template Tensor<S> softmax_channels(const Tensor<S>&);                                                 \
  template Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> argmax_channels(const Tensor<S>&, Index);

CFSEG_INSTANTIATE_UNET(float)
CFSEG_INSTANTIATE_UNET(double)

#undef CFSEG_INSTANTIATE_UNET

}  // namespace cfseg
