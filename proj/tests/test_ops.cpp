#include <doctest.h>

#include "nvc/adam.hpp"
#include "nvc/gradcheck.hpp"
#include "nvc/nn_layers.hpp"

using namespace nvc;

namespace {

// Independent references: direct summation straight from the definition,
// sharing no helpers with the library implementation.

template <typename S>
Tensor<S> ref_conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int sy, int sx) {
  int n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int oh = (h + sy - 1) / sy, ow = (ww + sx - 1) / sx;
  int pt = std::max(0, (oh - 1) * sy + kh - h) / 2;
  int pl = std::max(0, (ow - 1) * sx + kw - ww) / 2;
  Tensor<S> out(Shape{n, cout, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S s = b[co];
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oy * sy - pt + ky, ix = ox * sx - pl + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                s += x.at(i, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          out.at(i, co, oy, ox) = s;
        }
  return out;
}

template <typename S>
Tensor<S> ref_conv3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int sy, int sx) {
  int n = x.dim(0), cin = x.dim(1), t = x.dim(2), h = x.dim(3), ww = x.dim(4);
  int cout = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  int oh = (h + sy - 1) / sy, ow = (ww + sx - 1) / sx;
  int pt0 = (kt - 1) / 2;
  int pt = std::max(0, (oh - 1) * sy + kh - h) / 2;
  int pl = std::max(0, (ow - 1) * sx + kw - ww) / 2;
  Tensor<S> out(Shape{n, cout, t, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oz = 0; oz < t; ++oz)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            S s = b[co];
            for (int ci = 0; ci < cin; ++ci)
              for (int kz = 0; kz < kt; ++kz)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx) {
                    int iz = oz - pt0 + kz, iy = oy * sy - pt + ky, ix = ox * sx - pl + kx;
                    if (iz < 0 || iz >= t || iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                    s += x.at(i, ci, iz, iy, ix) * w.at(co, ci, kz, ky, kx);
                  }
            out.at(i, co, oz, oy, ox) = s;
          }
  return out;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename S>
double dot_all(const Tensor<S>& a, const Tensor<S>& b) {
  REQUIRE(a.shape() == b.shape());
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("same padding arithmetic") {
  // out = ceil(in/stride), pad_begin = floor(pad_total/2)
  SamePad p = same_pad(160, 5, 2);
  CHECK(p.out == 80);
  CHECK(p.pad_begin == 1);  // total = 79*2+5-160 = 3
  p = same_pad(160, 3, 2);
  CHECK(p.out == 80);
  CHECK(p.pad_begin == 0);  // total = 1
  p = same_pad(20, 5, 1);
  CHECK(p.out == 20);
  CHECK(p.pad_begin == 2);  // total = 4
  p = same_pad(5, 3, 2);
  CHECK(p.out == 3);
  CHECK(p.pad_begin == 1);  // total = 2
}

TEST_CASE("conv2d matches direct-summation reference") {
  Rng rng(3);
  for (int stride : {1, 2}) {
    Tensor<double> x = rand_normal<double>(Shape{2, 3, 7, 6}, rng);
    Tensor<double> w = rand_normal<double>(Shape{4, 3, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{4}, rng);
    auto y = conv2d(make_const(x), make_const(w), make_const(b), stride, stride);
    Tensor<double> r = ref_conv2d(x, w, b, stride, stride);
    CHECK(max_abs_diff(y->value, r) < 1e-12);
  }
  // 5x5 kernel, rectangular input
  Tensor<double> x = rand_normal<double>(Shape{1, 2, 9, 11}, rng);
  Tensor<double> w = rand_normal<double>(Shape{3, 2, 5, 5}, rng);
  Tensor<double> b = rand_normal<double>(Shape{3}, rng);
  auto y = conv2d(make_const(x), make_const(w), make_const(b), 2, 2);
  CHECK(y->value.shape() == Shape{1, 3, 5, 6});
  CHECK(max_abs_diff(y->value, ref_conv2d(x, w, b, 2, 2)) < 1e-12);
}

TEST_CASE("conv3d matches direct-summation reference") {
  Rng rng(4);
  Tensor<double> x = rand_normal<double>(Shape{1, 2, 4, 6, 5}, rng);
  Tensor<double> w = rand_normal<double>(Shape{3, 2, 3, 3, 3}, rng);
  Tensor<double> b = rand_normal<double>(Shape{3}, rng);
  auto y = conv3d(make_const(x), make_const(w), make_const(b), 2, 2);
  CHECK(y->value.shape() == Shape{1, 3, 4, 3, 3});  // time extent preserved
  CHECK(max_abs_diff(y->value, ref_conv3d(x, w, b, 2, 2)) < 1e-12);
}

TEST_CASE("transposed conv is the exact adjoint: <conv(x),y> == <x,tconv(y)>") {
  Rng rng(5);
  Tensor<double> x = rand_normal<double>(Shape{2, 2, 6, 6}, rng);
  Tensor<double> w = rand_normal<double>(Shape{3, 2, 3, 3}, rng);
  Tensor<double> zb3(Shape{3}), zb2(Shape{2});
  auto cx = conv2d(make_const(x), make_const(w), make_const(zb3), 2, 2);
  Tensor<double> y = rand_normal<double>(Shape{2, 3, 3, 3}, rng);
  auto ty = tconv2d(make_const(y), make_const(w), make_const(zb2), 2, 2);
  CHECK(ty->value.shape() == Shape{2, 2, 6, 6});
  CHECK(dot_all(cx->value, y) == doctest::Approx(dot_all(x, ty->value)).epsilon(1e-10));

  Tensor<double> x3 = rand_normal<double>(Shape{1, 2, 3, 4, 4}, rng);
  Tensor<double> w3 = rand_normal<double>(Shape{3, 2, 3, 3, 3}, rng);
  auto cx3 = conv3d(make_const(x3), make_const(w3), make_const(zb3), 2, 2);
  Tensor<double> y3 = rand_normal<double>(Shape{1, 3, 3, 2, 2}, rng);
  auto ty3 = tconv3d(make_const(y3), make_const(w3), make_const(zb2), 2, 2);
  CHECK(ty3->value.shape() == Shape{1, 2, 3, 4, 4});
  CHECK(dot_all(cx3->value, y3) == doctest::Approx(dot_all(x3, ty3->value)).epsilon(1e-10));
}

TEST_CASE("gradcheck: conv ops") {
  Rng rng(6);
  {
    Tensor<double> x = rand_normal<double>(Shape{2, 2, 5, 5}, rng);
    Tensor<double> w = rand_normal<double>(Shape{3, 2, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{3}, rng);
    auto rep = gradcheck<double>(
        [](const std::vector<Var<double>>& v) {
          return sum_all(tanh_op(conv2d(v[0], v[1], v[2], 2, 2)));
        },
        {x, w, b});
    INFO("conv2d rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 3, 3, 3}, rng);
    Tensor<double> w = rand_normal<double>(Shape{3, 2, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{2}, rng);
    auto rep = gradcheck<double>(
        [](const std::vector<Var<double>>& v) {
          return sum_all(tanh_op(tconv2d(v[0], v[1], v[2], 2, 2)));
        },
        {x, w, b});
    INFO("tconv2d rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 2, 3, 4, 4}, rng);
    Tensor<double> w = rand_normal<double>(Shape{2, 2, 3, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{2}, rng);
    auto rep = gradcheck<double>(
        [](const std::vector<Var<double>>& v) {
          return sum_all(tanh_op(conv3d(v[0], v[1], v[2], 2, 2)));
        },
        {x, w, b});
    INFO("conv3d rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 2, 3, 2, 2}, rng);
    Tensor<double> w = rand_normal<double>(Shape{2, 2, 3, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{2}, rng);
    auto rep = gradcheck<double>(
        [](const std::vector<Var<double>>& v) {
          return sum_all(tanh_op(tconv3d(v[0], v[1], v[2], 2, 2)));
        },
        {x, w, b});
    INFO("tconv3d rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("avg_pool2d values, truncation, gradient") {
  Tensor<double> x(Shape{1, 1, 2, 2});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  auto y = avg_pool2d(make_const(x), 2);
  CHECK(y->value[0] == doctest::Approx(2.5));

  // odd extents: trailing row/col dropped
  Rng rng(8);
  Tensor<double> x5 = rand_normal<double>(Shape{1, 2, 5, 5}, rng);
  auto y5 = avg_pool2d(make_const(x5), 2);
  CHECK(y5->value.shape() == Shape{1, 2, 2, 2});
  double s = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) s += x5.at(0, 1, 2 + dy, 2 + dx);
  CHECK(y5->value.at(0, 1, 1, 1) == doctest::Approx(s / 4));

  auto rep = gradcheck<double>(
      [](const std::vector<Var<double>>& v) { return sum_all(tanh_op(avg_pool2d(v[0], 2))); },
      {x5});
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("sep_conv_valid matches direct loops and gradchecks") {
  Rng rng(9);
  Tensor<double> x = rand_normal<double>(Shape{1, 2, 6, 7}, rng);
  std::vector<double> k{0.25, 0.5, 0.25};
  auto yr = sep_conv_valid(make_const(x), k, 0);
  CHECK(yr->value.shape() == Shape{1, 2, 4, 7});
  double want = 0;
  for (int j = 0; j < 3; ++j) want += k[j] * x.at(0, 1, 2 + j, 3);
  CHECK(yr->value.at(0, 1, 2, 3) == doctest::Approx(want));
  auto yc = sep_conv_valid(make_const(x), k, 1);
  CHECK(yc->value.shape() == Shape{1, 2, 6, 5});
  want = 0;
  for (int j = 0; j < 3; ++j) want += k[j] * x.at(0, 0, 1, 2 + j);
  CHECK(yc->value.at(0, 0, 1, 2) == doctest::Approx(want));

  for (int axis : {0, 1}) {
    auto rep = gradcheck<double>(
        [&](const std::vector<Var<double>>& v) {
          return sum_all(tanh_op(sep_conv_valid(v[0], k, axis)));
        },
        {x});
    CHECK(rep.max_rel_err < 1e-7);
  }
}

TEST_CASE("batchnorm: normalization, running stats, gradients") {
  Rng rng(10);
  const int c = 3;
  Tensor<double> x = rand_normal<double>(Shape{4, c, 5, 5}, rng);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] * 2.0 + 0.7;  // nonzero mean/var

  Tensor<double> gamma(Shape{c}, 1.0), beta(Shape{c});
  Tensor<double> rm(Shape{c}), rv(Shape{c}, 1.0);
  auto y = batchnorm(make_const(x), make_const(gamma), make_const(beta), &rm, &rv, true);

  // per-channel output stats: mean 0, biased var = var/(var + eps)
  const int64_t m = 4 * 5 * 5;
  for (int ci = 0; ci < c; ++ci) {
    double s = 0, ss = 0, xs_ = 0, xss = 0;
    for (int i = 0; i < 4; ++i)
      for (int p = 0; p < 25; ++p) {
        double v = y->value.at(i, ci, p / 5, p % 5);
        double xv = x.at(i, ci, p / 5, p % 5);
        s += v;
        ss += v * v;
        xs_ += xv;
        xss += xv * xv;
      }
    double xvar = xss / m - (xs_ / m) * (xs_ / m);
    CHECK(std::fabs(s / m) < 1e-10);
    CHECK(ss / m == doctest::Approx(xvar / (xvar + 1e-5)).epsilon(1e-9));
  }

  // running update: run = 0.9*init + 0.1*batch (variance unbiased)
  for (int ci = 0; ci < c; ++ci) {
    double s = 0;
    for (int i = 0; i < 4; ++i)
      for (int p = 0; p < 25; ++p) s += x.at(i, ci, p / 5, p % 5);
    double mu = s / m;
    double ss = 0;
    for (int i = 0; i < 4; ++i)
      for (int p = 0; p < 25; ++p) {
        double d = x.at(i, ci, p / 5, p % 5) - mu;
        ss += d * d;
      }
    CHECK(rm[ci] == doctest::Approx(0.1 * mu).epsilon(1e-10));
    CHECK(rv[ci] == doctest::Approx(0.9 * 1.0 + 0.1 * ss / (m - 1)).epsilon(1e-10));
  }

  for (bool training : {true, false}) {
    auto rep = gradcheck<double>(
        [&](const std::vector<Var<double>>& v) {
          Tensor<double> rm2(Shape{c}, 0.3), rv2(Shape{c}, 0.8);
          return sum_all(tanh_op(batchnorm(v[0], v[1], v[2], &rm2, &rv2, training)));
        },
        {x, rand_normal<double>(Shape{c}, rng), rand_normal<double>(Shape{c}, rng)});
    INFO("batchnorm training=" << training << " rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("gated activation value and gradient") {
  Rng rng(12);
  Tensor<double> x = rand_normal<double>(Shape{2, 6, 3, 3}, rng);
  auto y = gated_activation(make_const(x));
  CHECK(y->value.shape() == Shape{2, 3, 3, 3});
  double a = x.at(1, 2, 1, 1), b = x.at(1, 5, 1, 1);
  CHECK(y->value.at(1, 2, 1, 1) == doctest::Approx(std::tanh(a) / (1 + std::exp(-b))));

  auto rep = gradcheck<double>(
      [](const std::vector<Var<double>>& v) { return sum_all(gated_activation(v[0])); }, {x});
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("conv GRU: saturated update gate carries state through unchanged") {
  Rng rng(13);
  ParamStore<double> ps(99);
  auto w = make_conv_gru(ps, "gru", 2, 3);
  w.bu->value.fill(-1e9);  // u == 0 exactly => h' == h
  Tensor<double> x = rand_normal<double>(Shape{1, 2, 4, 4}, rng);
  Tensor<double> h = rand_normal<double>(Shape{1, 3, 4, 4}, rng);
  auto hn = conv_gru_step(make_const(x), make_const(h), w);
  for (int64_t i = 0; i < h.numel(); ++i) CHECK(hn->value[i] == h[i]);
}

TEST_CASE("gradcheck: conv GRU step (inputs and all weights)") {
  Rng rng(14);
  Tensor<double> x = rand_normal<double>(Shape{1, 2, 3, 3}, rng);
  Tensor<double> h = rand_normal<double>(Shape{1, 2, 3, 3}, rng);
  std::vector<Tensor<double>> ins{x, h};
  for (int i = 0; i < 6; ++i) ins.push_back(rand_normal<double>(Shape{2, 2, 3, 3}, rng, 0.4));
  for (int i = 0; i < 3; ++i) ins.push_back(rand_normal<double>(Shape{2}, rng, 0.2));
  auto rep = gradcheck<double>(
      [](const std::vector<Var<double>>& v) {
        ConvGruWeights<double> w;
        w.wu_x = v[2];
        w.wu_h = v[3];
        w.wr_x = v[4];
        w.wr_h = v[5];
        w.wn_x = v[6];
        w.wn_h = v[7];
        w.bu = v[8];
        w.br = v[9];
        w.bn = v[10];
        return sum_all(conv_gru_step(v[0], v[1], w));
      },
      ins);
  INFO("gru rel err " << rep.max_rel_err);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("adam: closed-form first step, bias correction, global clip") {
  // p=1, g=0.5, lr=0.01: m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25,
  // p' = 1 - 0.01*0.5/(0.5+1e-8)
  ParamStore<double> ps(1);
  auto p = ps.add("p", Tensor<double>(Shape{1}, 1.0));
  AdamState<double> st(ps);
  p->g()[0] = 0.5;
  double norm = adam_step<double>(ps, st, 0.01);
  CHECK(norm == doctest::Approx(0.5));
  CHECK(p->value[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));

  // second step, same raw gradient: m = 0.9*0.05 + 0.1*0.5 = 0.095,
  // v = 0.999*2.5e-4 + 0.001*0.25, mhat = m/(1-0.9^2), vhat = v/(1-0.999^2)
  double pv = p->value[0];
  zero_grads(ps);
  p->g()[0] = 0.5;
  adam_step<double>(ps, st, 0.01);
  double m2 = 0.9 * 0.05 + 0.1 * 0.5;
  double v2 = 0.999 * 2.5e-4 + 0.001 * 0.25;
  double want = pv - 0.01 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.998001)) + 1e-8);
  CHECK(p->value[0] == doctest::Approx(want).epsilon(1e-12));

  // clip: grads (6, 8) have norm 10 > 5, so the effective grads are (3, 4)
  ParamStore<double> ps2(1);
  auto a = ps2.add("a", Tensor<double>(Shape{1}, 0.0));
  auto b = ps2.add("b", Tensor<double>(Shape{1}, 0.0));
  AdamState<double> st2(ps2);
  a->g()[0] = 6.0;
  b->g()[0] = 8.0;
  double norm2 = adam_step<double>(ps2, st2, 0.01, 5.0);
  CHECK(norm2 == doctest::Approx(10.0));
  CHECK(st2.m[0][0] == doctest::Approx(0.1 * 3.0));
  CHECK(st2.m[1][0] == doctest::Approx(0.1 * 4.0));
}

TEST_CASE("param store: name-keyed seeding is order independent") {
  ParamStore<float> ps1(123), ps2(123);
  auto a1 = ps1.add_he("alpha", Shape{3, 4}, 4);
  auto b1 = ps1.add_he("beta", Shape{2, 2}, 2);
  auto b2 = ps2.add_he("beta", Shape{2, 2}, 2);
  auto a2 = ps2.add_he("alpha", Shape{3, 4}, 4);
  for (int64_t i = 0; i < a1->value.numel(); ++i) CHECK(a1->value[i] == a2->value[i]);
  for (int64_t i = 0; i < b1->value.numel(); ++i) CHECK(b1->value[i] == b2->value[i]);
  CHECK_THROWS_AS(ps1.add_zeros("alpha", Shape{1}), Error);

  ParamStore<float> ps3(124);
  auto a3 = ps3.add_he("alpha", Shape{3, 4}, 4);
  bool all_same = true;
  for (int64_t i = 0; i < a1->value.numel(); ++i) all_same &= a1->value[i] == a3->value[i];
  CHECK_FALSE(all_same);
}
