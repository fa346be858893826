#include <doctest.h>

#include "cfseg/layers.hpp"
#include "support.hpp"

using namespace cfseg;
using namespace cfseg::layers;
using T = Tensor<double>;
using V = Vec<double>;

namespace {

V random_vec(Index n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1, 1);
  V v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(gen);
  return v;
}

double at_or_zero(const T& t, Index b, Index c, Index z, Index y, Index x) {
  const Shape& s = t.shape();
  if (z < 0 || y < 0 || x < 0 || z >= s.d || y >= s.h || x >= s.w) return 0.0;
  return t(b, c, z, y, x);
}

T conv3_oracle(const T& in, const V& w, Index cout) {
  const Shape s = in.shape();
  T out(s.with_channels(cout));
  for (Index b = 0; b < s.n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index z = 0; z < s.d; ++z)
        for (Index y = 0; y < s.h; ++y)
          for (Index x = 0; x < s.w; ++x) {
            double acc = 0;
            for (int dz = -1; dz <= 1; ++dz)
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const int k = ((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1);
                  for (Index ci = 0; ci < s.c; ++ci)
                    acc += at_or_zero(in, b, ci, z + dz, y + dy, x + dx) * w[k * s.c * cout + ci + s.c * co];
                }
            out(b, co, z, y, x) = acc;
          }
  return out;
}

T upconv_oracle(const T& in, const V& w, const V& bias) {
  const Shape s = in.shape();
  const Index cout = bias.size();
  T out({s.n, cout, 2 * s.d, 2 * s.h, 2 * s.w});
  for (Index b = 0; b < s.n; ++b)
    for (Index co = 0; co < cout; ++co)
      for (Index z = 0; z < 2 * s.d; ++z)
        for (Index y = 0; y < 2 * s.h; ++y)
          for (Index x = 0; x < 2 * s.w; ++x) {
            const int k = ((z % 2) * 2 + (y % 2)) * 2 + (x % 2);
            double acc = bias[co];
            for (Index ci = 0; ci < s.c; ++ci) acc += in(b, ci, z / 2, y / 2, x / 2) * w[k * s.c * cout + ci + s.c * co];
            out(b, co, z, y, x) = acc;
          }
  return out;
}

double dot(const T& a, const T& r) { return (a.data() * r.data()).sum(); }

/// Central difference of f along every coordinate of `x`; returns the worst
/// relative error against `analytic`.
template <typename Param, typename F>
double fd_worst(Param& x, const Param& analytic, F&& f, double h = 1e-6) {
  double worst = 0.0;
  auto& data = [&]() -> auto& {
    if constexpr (std::is_same_v<Param, T>) return x.data();
    else return x;
  }();
  const auto& ref = [&]() -> const auto& {
    if constexpr (std::is_same_v<Param, T>) return analytic.data();
    else return analytic;
  }();
  for (Index i = 0; i < data.size(); ++i) {
    const double keep = data[i];
    data[i] = keep + h;
    const double up = f();
    data[i] = keep - h;
    const double down = f();
    data[i] = keep;
    worst = std::max(worst, test::rel_err((up - down) / (2 * h), ref[i], 1e-6));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv3 matches the direct convolution sum") {
  std::mt19937_64 gen(1);
  for (const Shape s : {Shape{2, 3, 4, 5, 6}, Shape{1, 1, 1, 1, 1}, Shape{1, 2, 3, 1, 7}}) {
    const T in = test::random_tensor<double>(s, gen);
    const V w = random_vec(27 * s.c * 4, gen);
    const T out = conv3_forward(in, w, 4);
    const T ref = conv3_oracle(in, w, 4);
    REQUIRE(out.shape() == ref.shape());
    CHECK((out.data() - ref.data()).abs().maxCoeff() < 1e-12);
  }
  // Float path agrees with the double oracle.
  const T in = test::random_tensor<double>({1, 2, 4, 4, 4}, gen);
  const V w = random_vec(27 * 2 * 3, gen);
  const Tensor<float> outf = conv3_forward(in.cast<float>(), Vec<float>(w.cast<float>()), 3);
  CHECK((outf.data().cast<double>() - conv3_oracle(in, w, 3).data()).abs().maxCoeff() < 1e-5);
}

TEST_CASE("conv3 gradients match finite differences") {
  std::mt19937_64 gen(2);
  T in = test::random_tensor<double>({2, 2, 3, 4, 3}, gen);
  V w = random_vec(27 * 2 * 3, gen);
  const T r = test::random_tensor<double>(in.shape().with_channels(3), gen);
  V gw = V::Zero(w.size());
  T gin(in.shape());
  conv3_backward(in, w, r, gw, &gin);
  auto loss = [&] { return dot(conv3_forward(in, w, 3), r); };
  CHECK(fd_worst(in, gin, loss) < 1e-6);
  CHECK(fd_worst(w, gw, loss) < 1e-6);
  // grad_weight accumulates.
  V twice = gw;
  conv3_backward<double>(in, w, r, twice, nullptr);
  CHECK((twice - 2 * gw).abs().maxCoeff() < 1e-10);
}

TEST_CASE("conv1 and upconv2 match oracles and finite differences") {
  std::mt19937_64 gen(3);
  T in = test::random_tensor<double>({2, 3, 2, 3, 2}, gen);
  V w = random_vec(3 * 4, gen), b = random_vec(4, gen);
  const T out1 = conv1_forward(in, w, b);
  for (Index n = 0; n < 2; ++n)
    for (Index co = 0; co < 4; ++co)
      for (Index v = 0; v < in.shape().spatial(); ++v) {
        double acc = b[co];
        for (Index ci = 0; ci < 3; ++ci) acc += in.channel(n, ci)[v] * w[ci + 3 * co];
        CHECK(out1.channel(n, co)[v] == doctest::Approx(acc).epsilon(1e-12));
      }
  const T r1 = test::random_tensor<double>(out1.shape(), gen);
  V gw = V::Zero(w.size()), gb = V::Zero(4);
  T gin(in.shape());
  conv1_backward(in, w, r1, gw, gb, &gin);
  auto loss1 = [&] { return dot(conv1_forward(in, w, b), r1); };
  CHECK(fd_worst(in, gin, loss1) < 1e-6);
  CHECK(fd_worst(w, gw, loss1) < 1e-6);
  CHECK(fd_worst(b, gb, loss1) < 1e-6);

  V uw = random_vec(8 * 3 * 2, gen), ub = random_vec(2, gen);
  const T up = upconv2_forward(in, uw, ub);
  const T ref = upconv_oracle(in, uw, ub);
  REQUIRE(up.shape() == Shape{2, 2, 4, 6, 4});
  CHECK((up.data() - ref.data()).abs().maxCoeff() < 1e-12);
  const T r2 = test::random_tensor<double>(up.shape(), gen);
  V guw = V::Zero(uw.size()), gub = V::Zero(2);
  T gin2(in.shape());
  upconv2_backward(in, uw, r2, guw, gub, gin2);
  auto loss2 = [&] { return dot(upconv2_forward(in, uw, ub), r2); };
  CHECK(fd_worst(in, gin2, loss2) < 1e-6);
  CHECK(fd_worst(uw, guw, loss2) < 1e-6);
  CHECK(fd_worst(ub, gub, loss2) < 1e-6);
}

TEST_CASE("max pooling picks the block maximum and routes gradients to it") {
  std::mt19937_64 gen(4);
  const T in = test::random_tensor<double>({2, 3, 4, 6, 2}, gen);
  std::vector<std::int32_t> arg;
  const T out = maxpool2_forward(in, arg);
  REQUIRE(out.shape() == Shape{2, 3, 2, 3, 1});
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 3; ++c)
      for (Index z = 0; z < 2; ++z)
        for (Index y = 0; y < 3; ++y) {
          double m = -1e9;
          for (int k = 0; k < 8; ++k) m = std::max(m, in(b, c, 2 * z + k / 4, 2 * y + (k / 2) % 2, k % 2));
          CHECK(out(b, c, z, y, 0) == m);
        }
  const T r = test::random_tensor<double>(out.shape(), gen);
  const T g = maxpool2_backward(in.shape(), arg, r);
  CHECK(g.data().sum() == doctest::Approx(r.data().sum()));
  CHECK((g.data() != 0.0).count() == out.size());
  T x = in;
  auto loss = [&] {
    std::vector<std::int32_t> a;
    return dot(maxpool2_forward(x, a), r);
  };
  CHECK(fd_worst(x, g, loss) < 1e-6);
}

TEST_CASE("batch norm + relu: forward statistics, running update and gradients") {
  std::mt19937_64 gen(5);
  T x = test::random_tensor<double>({2, 3, 2, 3, 4}, gen, -2.0, 3.0);
  V gamma = random_vec(3, gen) + 1.5, beta = random_vec(3, gen);
  const V rm = V::Zero(3), rv = V::Ones(3);
  BatchNormSettings settings;
  BatchNormCache<double> cache;
  BatchStats<double> stats;
  const T y = bn_relu_forward(x, gamma, beta, rm, rv, true, settings, &cache, &stats);
  const Index per = 2 * x.shape().spatial();
  for (Index c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index v = 0; v < x.shape().spatial(); ++v) s += x.channel(b, c)[v];
    const double mean = s / per;
    for (Index b = 0; b < 2; ++b)
      for (Index v = 0; v < x.shape().spatial(); ++v) s2 += std::pow(x.channel(b, c)[v] - mean, 2);
    const double var = s2 / per;
    CHECK(stats.mean[c] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(stats.unbiased_var[c] == doctest::Approx(s2 / (per - 1)).epsilon(1e-12));
    for (Index b = 0; b < 2; ++b)
      for (Index v = 0; v < x.shape().spatial(); ++v) {
        const double expect =
            std::max(0.0, gamma[c] * (x.channel(b, c)[v] - mean) / std::sqrt(var + settings.eps) + beta[c]);
        CHECK(y.channel(b, c)[v] == doctest::Approx(expect).epsilon(1e-10));
      }
  }
  V m = rm, v = rv;
  update_running_stats(m, v, stats, settings);
  for (Index c = 0; c < 3; ++c) {
    CHECK(m[c] == doctest::Approx(0.1 * stats.mean[c]).epsilon(1e-12));
    CHECK(v[c] == doctest::Approx(0.9 + 0.1 * stats.unbiased_var[c]).epsilon(1e-12));
  }

  const T r = test::random_tensor<double>(y.shape(), gen);
  V gg = V::Zero(3), gb = V::Zero(3);
  const T gx = bn_relu_backward(cache, gamma, y, r, gg, gb);
  auto loss = [&] { return dot(bn_relu_forward(x, gamma, beta, rm, rv, true, settings, static_cast<BatchNormCache<double>*>(nullptr)), r); };
  CHECK(fd_worst(x, gx, loss) < 1e-6);
  CHECK(fd_worst(gamma, gg, loss) < 1e-6);
  CHECK(fd_worst(beta, gb, loss) < 1e-6);

  // Eval mode uses the running statistics and is an affine map before ReLU.
  const V em = random_vec(3, gen), ev = random_vec(3, gen).abs() + 0.5;
  BatchNormCache<double> ecache;
  const T ye = bn_relu_forward(x, gamma, beta, em, ev, false, settings, &ecache);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < x.shape().spatial(); ++i) {
      const double expect = std::max(0.0, gamma[c] * (x.channel(1, c)[i] - em[c]) / std::sqrt(ev[c] + settings.eps) + beta[c]);
      CHECK(ye.channel(1, c)[i] == doctest::Approx(expect).epsilon(1e-10));
    }
  V egg = V::Zero(3), egb = V::Zero(3);
  const T egx = bn_relu_backward(ecache, gamma, ye, r, egg, egb);
  auto eloss = [&] { return dot(bn_relu_forward(x, gamma, beta, em, ev, false, settings, static_cast<BatchNormCache<double>*>(nullptr)), r); };
  CHECK(fd_worst(x, egx, eloss) < 1e-6);
  CHECK(fd_worst(gamma, egg, eloss) < 1e-6);
}

TEST_CASE("channel concat and split are inverse") {
  std::mt19937_64 gen(6);
  const T a = test::random_tensor<double>({2, 3, 2, 2, 2}, gen);
  const T b = test::random_tensor<double>({2, 5, 2, 2, 2}, gen);
  const T j = concat_channels(a, b);
  REQUIRE(j.shape() == Shape{2, 8, 2, 2, 2});
  CHECK(j(1, 4, 1, 0, 1) == b(1, 1, 1, 0, 1));
  CHECK(j(0, 2, 0, 1, 1) == a(0, 2, 0, 1, 1));
  T a2, b2;
  split_channels(j, 3, a2, b2);
  CHECK((a2.data() == a.data()).all());
  CHECK((b2.data() == b.data()).all());
}
