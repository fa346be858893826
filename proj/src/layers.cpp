#include "cfseg/layers.hpp"

#include <array>
#include <cmath>

namespace cfseg::layers {
namespace {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using StridedMap = Eigen::Map<Matrix<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedMap = Eigen::Map<const Matrix<Scalar>, 0, Eigen::OuterStride<>>;

// Geometry of a sample zero-padded by one voxel on every face. Output voxels
// are evaluated over the contiguous padded range [first, first + rows), which
// contains every interior voxel; border rows are computed and discarded.
struct PaddedGrid {
  Index d, h, w;
  Index pw, ph, plane, total;
  Index first, rows;
  std::array<Index, 27> offsets;

  explicit PaddedGrid(const Shape& s) : d(s.d), h(s.h), w(s.w) {
    pw = w + 2;
    ph = h + 2;
    plane = pw * ph;
    total = plane * (d + 2);
    first = padded(0, 0, 0);
    rows = padded(d - 1, h - 1, w - 1) + 1 - first;
    int k = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) offsets[static_cast<std::size_t>(k++)] = dz * plane + dy * pw + dx;
  }

  Index padded(Index z, Index y, Index x) const { return (z + 1) * plane + (y + 1) * pw + (x + 1); }
};

// Copies one sample (voxels x channels) into a zeroed padded buffer.
template <typename Scalar>
void pad_sample(const PaddedGrid& g, const Scalar* src, Index channels, Matrix<Scalar>& dst) {
  dst.setZero(g.total, channels);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* s = src + c * g.d * g.h * g.w;
    Scalar* p = dst.data() + c * g.total;
    for (Index z = 0; z < g.d; ++z)
      for (Index y = 0; y < g.h; ++y) {
        const Scalar* row = s + g.w * (y + g.h * z);
        std::copy(row, row + g.w, p + g.padded(z, y, 0));
      }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv3_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, Index out_channels) {
  const Shape& s = in.shape();
  const Index cin = s.c;
  if (weight.size() != 27 * cin * out_channels)
    fail(ErrorCode::kShapeMismatch, "conv3 weight size does not match channels");
  const PaddedGrid g(s);
  Tensor<Scalar> out(s.with_channels(out_channels));
  Matrix<Scalar> padded;
  Matrix<Scalar> acc(g.rows, out_channels);
  for (Index b = 0; b < s.n; ++b) {
    pad_sample(g, in.channel(b, 0), cin, padded);
    acc.setZero();
    for (int k = 0; k < 27; ++k) {
      ConstStridedMap<Scalar> shifted(padded.data() + g.first + g.offsets[static_cast<std::size_t>(k)],
                                      g.rows, cin, Eigen::OuterStride<>(g.total));
      Eigen::Map<const Matrix<Scalar>> wk(weight.data() + k * cin * out_channels, cin, out_channels);
      acc.noalias() += shifted * wk;
    }
    for (Index c = 0; c < out_channels; ++c) {
      Scalar* o = out.channel(b, c);
      const Scalar* a = acc.data() + c * g.rows;
      for (Index z = 0; z < s.d; ++z)
        for (Index y = 0; y < s.h; ++y) {
          const Scalar* row = a + g.padded(z, y, 0) - g.first;
          std::copy(row, row + s.w, o + s.w * (y + s.h * z));
        }
    }
  }
  return out;
}

template <typename Scalar>
void conv3_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                    Vec<Scalar>& grad_weight, Tensor<Scalar>* grad_in) {
  const Shape& s = in.shape();
  const Index cin = s.c;
  const Index cout = grad_out.shape().c;
  if (weight.size() != 27 * cin * cout || grad_weight.size() != weight.size())
    fail(ErrorCode::kShapeMismatch, "conv3 gradient buffers do not match");
  const PaddedGrid g(s);
  if (grad_in) *grad_in = Tensor<Scalar>(s);
  Matrix<Scalar> padded;
  Matrix<Scalar> gacc(g.rows, cout);
  Matrix<Scalar> gpad;
  for (Index b = 0; b < s.n; ++b) {
    pad_sample(g, in.channel(b, 0), cin, padded);
    gacc.setZero();
    for (Index c = 0; c < cout; ++c) {
      const Scalar* go = grad_out.channel(b, c);
      Scalar* a = gacc.data() + c * g.rows;
      for (Index z = 0; z < s.d; ++z)
        for (Index y = 0; y < s.h; ++y) {
          const Scalar* row = go + s.w * (y + s.h * z);
          std::copy(row, row + s.w, a + g.padded(z, y, 0) - g.first);
        }
    }
    if (grad_in) gpad.setZero(g.total, cin);
    for (int k = 0; k < 27; ++k) {
      const Index off = g.first + g.offsets[static_cast<std::size_t>(k)];
      ConstStridedMap<Scalar> shifted(padded.data() + off, g.rows, cin, Eigen::OuterStride<>(g.total));
      Eigen::Map<Matrix<Scalar>> gwk(grad_weight.data() + k * cin * cout, cin, cout);
      gwk.noalias() += shifted.transpose() * gacc;
      if (grad_in) {
        Eigen::Map<const Matrix<Scalar>> wk(weight.data() + k * cin * cout, cin, cout);
        StridedMap<Scalar> gshift(gpad.data() + off, g.rows, cin, Eigen::OuterStride<>(g.total));
        gshift.noalias() += gacc * wk.transpose();
      }
    }
    if (grad_in) {
      for (Index c = 0; c < cin; ++c) {
        Scalar* gi = grad_in->channel(b, c);
        const Scalar* p = gpad.data() + c * g.total;
        for (Index z = 0; z < s.d; ++z)
          for (Index y = 0; y < s.h; ++y) {
            const Scalar* row = p + g.padded(z, y, 0);
            std::copy(row, row + s.w, gi + s.w * (y + s.h * z));
          }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv1_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Vec<Scalar>& bias) {
  const Shape& s = in.shape();
  const Index cout = bias.size();
  if (weight.size() != s.c * cout) fail(ErrorCode::kShapeMismatch, "conv1 weight size mismatch");
  Tensor<Scalar> out(s.with_channels(cout));
  Eigen::Map<const Matrix<Scalar>> w(weight.data(), s.c, cout);
  for (Index b = 0; b < s.n; ++b) {
    auto o = out.sample(b);
    o.noalias() = in.sample(b) * w;
    o.rowwise() += bias.matrix().transpose();
  }
  return out;
}

template <typename Scalar>
void conv1_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                    Vec<Scalar>& grad_weight, Vec<Scalar>& grad_bias, Tensor<Scalar>* grad_in) {
  const Shape& s = in.shape();
  const Index cout = grad_out.shape().c;
  Eigen::Map<const Matrix<Scalar>> w(weight.data(), s.c, cout);
  Eigen::Map<Matrix<Scalar>> gw(grad_weight.data(), s.c, cout);
  if (grad_in) *grad_in = Tensor<Scalar>(s);
  for (Index b = 0; b < s.n; ++b) {
    const auto go = grad_out.sample(b);
    gw.noalias() += in.sample(b).transpose() * go;
    grad_bias += go.colwise().sum().transpose().array();
    if (grad_in) grad_in->sample(b).noalias() = go * w.transpose();
  }
}

template <typename Scalar>
Tensor<Scalar> upconv2_forward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Vec<Scalar>& bias) {
  const Shape& s = in.shape();
  const Index cin = s.c;
  const Index cout = bias.size();
  if (weight.size() != 8 * cin * cout) fail(ErrorCode::kShapeMismatch, "upconv weight size mismatch");
  const Shape os{s.n, cout, 2 * s.d, 2 * s.h, 2 * s.w};
  Tensor<Scalar> out(os);
  Matrix<Scalar> tap(s.spatial(), cout);
  for (Index b = 0; b < s.n; ++b) {
    const auto x = in.sample(b);
    for (int k = 0; k < 8; ++k) {
      const int oz = k >> 2, oy = (k >> 1) & 1, ox = k & 1;
      Eigen::Map<const Matrix<Scalar>> wk(weight.data() + k * cin * cout, cin, cout);
      tap.noalias() = x * wk;
      for (Index c = 0; c < cout; ++c) {
        Scalar* o = out.channel(b, c);
        const Scalar* t = tap.data() + c * s.spatial();
        const Scalar bc = bias[c];
        for (Index z = 0; z < s.d; ++z)
          for (Index y = 0; y < s.h; ++y) {
            Scalar* orow = o + os.w * ((2 * y + oy) + os.h * (2 * z + oz)) + ox;
            const Scalar* trow = t + s.w * (y + s.h * z);
            for (Index xx = 0; xx < s.w; ++xx) orow[2 * xx] = trow[xx] + bc;
          }
      }
    }
  }
  return out;
}

template <typename Scalar>
void upconv2_backward(const Tensor<Scalar>& in, const Vec<Scalar>& weight, const Tensor<Scalar>& grad_out,
                      Vec<Scalar>& grad_weight, Vec<Scalar>& grad_bias, Tensor<Scalar>& grad_in) {
  const Shape& s = in.shape();
  const Shape& os = grad_out.shape();
  const Index cin = s.c;
  const Index cout = os.c;
  grad_in = Tensor<Scalar>(s);
  Matrix<Scalar> tap(s.spatial(), cout);
  for (Index b = 0; b < s.n; ++b) {
    const auto x = in.sample(b);
    auto gx = grad_in.sample(b);
    grad_bias += grad_out.sample(b).colwise().sum().transpose().array();
    for (int k = 0; k < 8; ++k) {
      const int oz = k >> 2, oy = (k >> 1) & 1, ox = k & 1;
      for (Index c = 0; c < cout; ++c) {
        const Scalar* go = grad_out.channel(b, c);
        Scalar* t = tap.data() + c * s.spatial();
        for (Index z = 0; z < s.d; ++z)
          for (Index y = 0; y < s.h; ++y) {
            const Scalar* grow = go + os.w * ((2 * y + oy) + os.h * (2 * z + oz)) + ox;
            Scalar* trow = t + s.w * (y + s.h * z);
            for (Index xx = 0; xx < s.w; ++xx) trow[xx] = grow[2 * xx];
          }
      }
      Eigen::Map<const Matrix<Scalar>> wk(weight.data() + k * cin * cout, cin, cout);
      Eigen::Map<Matrix<Scalar>> gwk(grad_weight.data() + k * cin * cout, cin, cout);
      gwk.noalias() += x.transpose() * tap;
      gx.noalias() += tap * wk.transpose();
    }
  }
}

template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& in, std::vector<std::int32_t>& argmax) {
  const Shape& s = in.shape();
  if (s.d % 2 || s.h % 2 || s.w % 2) fail(ErrorCode::kShapeMismatch, "maxpool needs even spatial dims");
  const Shape os{s.n, s.c, s.d / 2, s.h / 2, s.w / 2};
  Tensor<Scalar> out(os);
  argmax.assign(static_cast<std::size_t>(os.size()), 0);
  Index o = 0;
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      const Scalar* src = in.channel(b, c);
      Scalar* dst = out.channel(b, c);
      for (Index z = 0; z < os.d; ++z)
        for (Index y = 0; y < os.h; ++y)
          for (Index x = 0; x < os.w; ++x, ++o) {
            Index best = (2 * x) + s.w * ((2 * y) + s.h * (2 * z));
            Scalar best_v = src[best];
            for (int k = 1; k < 8; ++k) {
              const Index idx = (2 * x + (k & 1)) + s.w * ((2 * y + ((k >> 1) & 1)) + s.h * (2 * z + (k >> 2)));
              if (src[idx] > best_v) {
                best_v = src[idx];
                best = idx;
              }
            }
            dst[x + os.w * (y + os.h * z)] = best_v;
            argmax[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(best);
          }
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Shape& in_shape, const std::vector<std::int32_t>& argmax,
                                 const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> grad_in(in_shape);
  const Shape& os = grad_out.shape();
  Index o = 0;
  for (Index b = 0; b < os.n; ++b)
    for (Index c = 0; c < os.c; ++c) {
      const Scalar* g = grad_out.channel(b, c);
      Scalar* gi = grad_in.channel(b, c);
      for (Index v = 0; v < os.spatial(); ++v, ++o) gi[argmax[static_cast<std::size_t>(o)]] += g[v];
    }
  return grad_in;
}

template <typename Scalar>
Tensor<Scalar> bn_relu_forward(const Tensor<Scalar>& x, const Vec<Scalar>& gamma, const Vec<Scalar>& beta,
                               const Vec<Scalar>& running_mean, const Vec<Scalar>& running_var, bool training,
                               const BatchNormSettings& settings, BatchNormCache<Scalar>* cache,
                               BatchStats<Scalar>* stats) {
  const Shape& s = x.shape();
  const Index vox = s.spatial();
  const Index count = s.n * vox;
  Tensor<Scalar> xhat(s);
  Vec<Scalar> invstd(s.c);
  if (stats) {
    stats->mean = Vec<Scalar>::Zero(s.c);
    stats->unbiased_var = Vec<Scalar>::Ones(s.c);
  }
  for (Index c = 0; c < s.c; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (Index b = 0; b < s.n; ++b)
        sum += Eigen::Map<const Vec<Scalar>>(x.channel(b, c), vox).template cast<double>().sum();
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (Index b = 0; b < s.n; ++b)
        sq += (Eigen::Map<const Vec<Scalar>>(x.channel(b, c), vox).template cast<double>() - mean)
                  .square()
                  .sum();
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      if (stats) {
        stats->mean[c] = static_cast<Scalar>(mean);
        stats->unbiased_var[c] = static_cast<Scalar>(unbiased);
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const Scalar is = static_cast<Scalar>(1.0 / std::sqrt(var + settings.eps));
    const Scalar m = static_cast<Scalar>(mean);
    invstd[c] = is;
    for (Index b = 0; b < s.n; ++b) {
      Eigen::Map<const Vec<Scalar>> xi(x.channel(b, c), vox);
      Eigen::Map<Vec<Scalar>> xh(xhat.channel(b, c), vox);
      xh = (xi - m) * is;
    }
  }
  Tensor<Scalar> out(s);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      Eigen::Map<const Vec<Scalar>> xh(xhat.channel(b, c), vox);
      Eigen::Map<Vec<Scalar>> o(out.channel(b, c), vox);
      o = (xh * gamma[c] + beta[c]).max(Scalar(0));
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->invstd = std::move(invstd);
    cache->training = training;
  }
  return out;
}

template <typename Scalar>
void update_running_stats(Vec<Scalar>& running_mean, Vec<Scalar>& running_var, const BatchStats<Scalar>& stats,
                          const BatchNormSettings& settings) {
  const Scalar m = static_cast<Scalar>(settings.momentum);
  running_mean = m * running_mean + (Scalar(1) - m) * stats.mean;
  running_var = m * running_var + (Scalar(1) - m) * stats.unbiased_var;
}

template <typename Scalar>
Tensor<Scalar> bn_relu_backward(const BatchNormCache<Scalar>& cache, const Vec<Scalar>& gamma,
                                const Tensor<Scalar>& out, const Tensor<Scalar>& grad_out,
                                Vec<Scalar>& grad_gamma, Vec<Scalar>& grad_beta) {
  const Shape& s = out.shape();
  const Index vox = s.spatial();
  const double count = static_cast<double>(s.n * vox);
  Tensor<Scalar> grad_in(s);
  Tensor<Scalar> dy(s);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      Eigen::Map<const Vec<Scalar>> o(out.channel(b, c), vox);
      Eigen::Map<const Vec<Scalar>> g(grad_out.channel(b, c), vox);
      Eigen::Map<Vec<Scalar>>(dy.channel(b, c), vox) = (o > Scalar(0)).select(g, Scalar(0));
    }
  for (Index c = 0; c < s.c; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (Index b = 0; b < s.n; ++b) {
      Eigen::Map<const Vec<Scalar>> d(dy.channel(b, c), vox);
      Eigen::Map<const Vec<Scalar>> xh(cache.xhat.channel(b, c), vox);
      sum_dy += d.template cast<double>().sum();
      sum_dy_xhat += (d * xh).template cast<double>().sum();
    }
    grad_gamma[c] += static_cast<Scalar>(sum_dy_xhat);
    grad_beta[c] += static_cast<Scalar>(sum_dy);
    const Scalar scale = gamma[c] * cache.invstd[c];
    for (Index b = 0; b < s.n; ++b) {
      Eigen::Map<const Vec<Scalar>> d(dy.channel(b, c), vox);
      Eigen::Map<const Vec<Scalar>> xh(cache.xhat.channel(b, c), vox);
      Eigen::Map<Vec<Scalar>> gi(grad_in.channel(b, c), vox);
      if (cache.training) {
        const Scalar mean_dy = static_cast<Scalar>(sum_dy / count);
        const Scalar mean_dy_xhat = static_cast<Scalar>(sum_dy_xhat / count);
        gi = scale * (d - mean_dy - xh * mean_dy_xhat);
      } else {
        gi = scale * d;
      }
    }
  }
  return grad_in;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.d != sb.d || sa.h != sb.h || sa.w != sb.w)
    fail(ErrorCode::kShapeMismatch, "concat needs matching batch and spatial dims");
  Tensor<Scalar> out(sa.with_channels(sa.c + sb.c));
  for (Index n = 0; n < sa.n; ++n) {
    auto o = out.sample(n);
    o.leftCols(sa.c) = a.sample(n);
    o.rightCols(sb.c) = b.sample(n);
  }
  return out;
}

template <typename Scalar>
void split_channels(const Tensor<Scalar>& joined, Index first_channels, Tensor<Scalar>& a,
                    Tensor<Scalar>& b) {
  const Shape& s = joined.shape();
  a = Tensor<Scalar>(s.with_channels(first_channels));
  b = Tensor<Scalar>(s.with_channels(s.c - first_channels));
  for (Index n = 0; n < s.n; ++n) {
    a.sample(n) = joined.sample(n).leftCols(first_channels);
    b.sample(n) = joined.sample(n).rightCols(s.c - first_channels);
  }
}

#define CFSEG_INSTANTIATE_LAYERS(S)                                                                       \
  template Tensor<S> conv3_forward(const Tensor<S>&, const Vec<S>&, Index);                               \
  template void conv3_backward(const Tensor<S>&, const Vec<S>&, const Tensor<S>&, Vec<S>&, Tensor<S>*);   \
  template Tensor<S> conv1_forward(const Tensor<S>&, const Vec<S>&, const Vec<S>&);                       \
  template void conv1_backward(const Tensor<S>&, const Vec<S>&, const Tensor<S>&, Vec<S>&, Vec<S>&,       \
                               Tensor<S>*);                                                               \
  template Tensor<S> upconv2_forward(const Tensor<S>&, const Vec<S>&, const Vec<S>&);                     \
  template void upconv2_backward(const Tensor<S>&, const Vec<S>&, const Tensor<S>&, Vec<S>&, Vec<S>&,     \
                                 Tensor<S>&);                                                             \
  template Tensor<S> maxpool2_forward(const Tensor<S>&, std::vector<std::int32_t>&);                      \
  template Tensor<S> maxpool2_backward(const Shape&, const std::vector<std::int32_t>&, const Tensor<S>&); \
  template Tensor<S> bn_relu_forward(const Tensor<S>&, const Vec<S>&, const Vec<S>&, const Vec<S>&,       \
                                     const Vec<S>&, bool, const BatchNormSettings&, BatchNormCache<S>*,   \
                                     BatchStats<S>*);                                                     \
  template void update_running_stats(Vec<S>&, Vec<S>&, const BatchStats<S>&, const BatchNormSettings&);   \
  template Tensor<S> bn_relu_backward(const BatchNormCache<S>&, const Vec<S>&, const Tensor<S>&,          \
                                      const Tensor<S>&, Vec<S>&, Vec<S>&);                                \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                                 \
  template void split_channels(const Tensor<S>&, Index, Tensor<S>&, Tensor<S>&);

CFSEG_INSTANTIATE_LAYERS(float)
CFSEG_INSTANTIATE_LAYERS(double)

#undef CFSEG_INSTANTIATE_LAYERS

}  // namespace cfseg::layers
