#include <doctest.h>

#include <cmath>

#include "nvc/autoencoder.hpp"
#include "nvc/gradcheck.hpp"
#include "nvc/msssim.hpp"

using namespace nvc;

namespace {

template <typename S>
Tensor<S> random_video(const Shape& s, uint64_t seed) {
  Rng rng(seed);
  return rand_uniform<S>(s, rng, S(0), S(255));
}

AutoencoderConfig small_cfg(AeMode mode) {
  AutoencoderConfig c;
  c.mode = mode;
  c.input_channels = 2;
  c.latent_channels = 2;
  c.front_channels = 2;
  c.hidden_channels = 3;
  c.res_blocks = 1;
  return c;
}

}  // namespace

// [DERIVED] transpose_01 values and gradient.
TEST_CASE("transpose_01: values and gradient") {
  Tensor<double> x(Shape{2, 3, 4});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = 0.01 * static_cast<double>(i * i);
  Var<double> y = transpose_01(make_const(x));
  REQUIRE(y->value.shape() == (Shape{3, 2, 4}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) CHECK(y->value.at(j, i, k) == x.at(i, j, k));
  auto f = [](const std::vector<Var<double>>& in) {
    return mean_all(mul(transpose_01(in[0]), transpose_01(in[0])));
  };
  CHECK(gradcheck<double>(f, {x}).max_rel_err < 1e-7);
}

// [PAPER] 8x3x160x160 -> 8x32x20x20 latents, decoded back to 8x3x160x160.
TEST_CASE("autoencoder 2D: published shape contract at 160x160") {
  ParamStore<float> ps(1);
  AutoencoderConfig cfg;
  Autoencoder<float> ae(ps, cfg);
  NoGradGuard ng;
  Var<float> x = make_const(random_video<float>(Shape{8, 3, 160, 160}, 42));
  Var<float> z = ae.encode(x, /*training=*/false);
  REQUIRE(z->value.shape() == (Shape{8, 32, 20, 20}));
  Var<float> y = ae.decode(z, false);
  REQUIRE(y->value.shape() == (Shape{8, 3, 160, 160}));
}

// [TRIVIAL] Stride arithmetic at 64x64 and the indivisibility guard.
TEST_CASE("autoencoder: stride-8 shapes and input validation") {
  ParamStore<float> ps(2);
  AutoencoderConfig cfg;
  Autoencoder<float> ae(ps, cfg);
  NoGradGuard ng;
  Var<float> x = make_const(random_video<float>(Shape{2, 3, 64, 64}, 7));
  Var<float> z = ae.encode(x, false);
  REQUIRE(z->value.shape() == (Shape{2, 32, 8, 8}));
  CHECK(ae.decode(z, false)->value.shape() == (Shape{2, 3, 64, 64}));
  CHECK_THROWS(ae.encode(make_const(random_video<float>(Shape{1, 3, 60, 64}, 8)), false));
  CHECK_THROWS(ae.encode(make_const(random_video<float>(Shape{1, 3, 64, 52}, 9)), false));
}

// [TRIVIAL] frame2D and video3D agree on shapes but compute different maps.
TEST_CASE("autoencoder: 2D and 3D modes share the shape contract") {
  ParamStore<float> ps2(3), ps3(3);
  AutoencoderConfig c2, c3;
  c3.mode = AeMode::kVideo3d;
  Autoencoder<float> ae2(ps2, c2), ae3(ps3, c3);
  NoGradGuard ng;
  Tensor<float> xt = random_video<float>(Shape{4, 3, 64, 64}, 11);
  Var<float> z2 = ae2.encode(make_const(xt), false);
  Var<float> z3 = ae3.encode(make_const(xt), false);
  REQUIRE(z2->value.shape() == (Shape{4, 32, 8, 8}));
  REQUIRE(z3->value.shape() == (Shape{4, 32, 8, 8}));
  double diff = 0.0;
  for (int64_t i = 0; i < z2->value.numel(); ++i)
    diff += std::fabs(static_cast<double>(z2->value.data()[i] - z3->value.data()[i]));
  CHECK(diff > 0.0);
  CHECK(ae3.decode(z3, false)->value.shape() == (Shape{4, 3, 64, 64}));
}

// [DERIVED] Fully convolutional: shifting the input by one latent stride
// shifts the latents, away from a receptive-field margin (eval-mode BN so
// the map is pointwise).  Margin: receptive radius ~50 px = 7 latent cells.
TEST_CASE("autoencoder 2D: translation equivariance in the interior") {
  ParamStore<float> ps(5);
  AutoencoderConfig cfg;
  Autoencoder<float> ae(ps, cfg);
  NoGradGuard ng;
  const int hw = 160, shift = AutoencoderConfig::kStride;
  Tensor<float> a = random_video<float>(Shape{1, 3, hw, hw}, 21);
  Tensor<float> b(Shape{1, 3, hw, hw});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x)
        b.at(0, c, y, x) = x >= shift ? a.at(0, c, y, x - shift) : 0.0f;
  Tensor<float> za = ae.encode(make_const(a), false)->value;
  Tensor<float> zb = ae.encode(make_const(b), false)->value;
  const int m = 7, n = hw / 8;
  double worst = 0.0;
  for (int c = 0; c < 32; ++c)
    for (int y = m; y < n - m; ++y)
      for (int x = m; x < n - m - 1; ++x)
        worst = std::max(worst,
                         std::fabs(static_cast<double>(zb.at(0, c, y, x + 1) - za.at(0, c, y, x))));
  CHECK(worst < 1e-4);
}

// [DERIVED] Spec'd example: gradient of MS-SSIM(x, decode(z)) w.r.t. latents
// on 1x32x4x4 passes a finite-difference check.
TEST_CASE("autoencoder: decoder gradient through MS-SSIM") {
  ParamStore<double> ps(6);
  AutoencoderConfig cfg;
  Autoencoder<double> ae(ps, cfg);
  Rng rng(13);
  Tensor<double> z0 = rand_normal<double>(Shape{1, 32, 4, 4}, rng);
  Tensor<double> xref = random_video<double>(Shape{1, 3, 32, 32}, 17);
  auto f = [&](const std::vector<Var<double>>& in) {
    return ms_ssim(make_const(xref), ae.decode(in[0], false));
  };
  GradCheckReport r = gradcheck<double>(f, {z0}, 1e-5, /*max_entries_per_input=*/24);
  CHECK(r.max_rel_err < 1e-6);
}

// [DERIVED] End-to-end 3D path (transpose/reshape/conv3d/tconv3d/batchnorm):
// analytic gradients match central differences for sampled parameters and
// the input.
TEST_CASE("autoencoder 3D: end-to-end gradient probe") {
  ParamStore<double> ps(8);
  Autoencoder<double> ae(ps, small_cfg(AeMode::kVideo3d));
  Tensor<double> xt = random_video<double>(Shape{2, 2, 8, 8}, 23);
  for (int64_t i = 0; i < xt.numel(); ++i) xt.data()[i] /= 255.0;  // keep activations tame
  Var<double> x = make_leaf(xt);
  auto loss_value = [&]() {
    NoGradGuard ng;
    return mean_all(mul(ae.decode(ae.encode(make_const(x->value), false), false),
                        make_const(Tensor<double>(x->value.shape(), 0.01))))
        ->value[0];
  };
  backward(mean_all(
      mul(ae.decode(ae.encode(x, false), false), make_const(Tensor<double>(xt.shape(), 0.01)))));
  const double h = 1e-5;
  double worst = 0.0;
  auto probe = [&](Tensor<double>& val, const Tensor<double>& grad, uint64_t seed) {
    Rng pick(seed);
    const int n = static_cast<int>(std::min<int64_t>(4, val.numel()));
    for (int i = 0; i < n; ++i) {
      const int64_t e = static_cast<int64_t>(pick.below(static_cast<uint64_t>(val.numel())));
      const double keep = val[e];
      val[e] = keep + h;
      const double up = loss_value();
      val[e] = keep - h;
      const double dn = loss_value();
      val[e] = keep;
      const double num = (up - dn) / (2.0 * h);
      const double ana = grad.numel() ? grad[e] : 0.0;
      worst = std::max(worst, std::fabs(num - ana) / std::max({1.0, std::fabs(num), std::fabs(ana)}));
    }
  };
  for (auto& p : ps.params) probe(p->value, p->grad, fnv1a64(p->name));
  probe(x->value, x->grad, 999);
  CHECK(worst < 1e-6);
}
