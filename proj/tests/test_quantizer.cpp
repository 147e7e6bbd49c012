#include <doctest.h>

#include "nvc/gradcheck.hpp"
#include "nvc/quantizer.hpp"

using namespace nvc;

namespace {

// Independent soft-assignment reference (plain formula, no max subtraction).
template <typename S>
std::vector<double> ref_soft(S z, const std::vector<double>& centers, double tau) {
  std::vector<double> e(centers.size());
  double s = 0;
  for (size_t i = 0; i < centers.size(); ++i) {
    e[i] = std::exp(-tau * std::fabs(static_cast<double>(z) - centers[i]));
    s += e[i];
  }
  for (auto& v : e) v /= s;
  return e;
}

}  // namespace

TEST_CASE("worked example: z=0.4, centers {-1,0,1}") {
  Tensor<double> z(Shape{1}, 0.4);
  Tensor<double> c(Shape{3});
  c[0] = -1;
  c[1] = 0;
  c[2] = 1;

  Tensor<int32_t> codes = quantize_hard(z, c);
  CHECK(codes[0] == 1);
  Tensor<double> deq = dequantize(codes, c);
  CHECK(deq[0] == 0.0);

  // softmax of -1 * [1.4, 0.4, 0.6], frozen from the formula
  Tensor<double> q = soft_assign(z, c, 1.0);
  CHECK(q[0] == doctest::Approx(0.168241894297818).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.457328884055285).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(0.374429221646897).epsilon(1e-12));
  CHECK(q[0] + q[1] + q[2] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("uniform centers span [-2,2]") {
  Tensor<float> c = uniform_centers<float>(8);
  CHECK(c[0] == -2.0f);
  CHECK(c[7] == 2.0f);
  CHECK(c[1] == doctest::Approx(-2.0 + 4.0 / 7).epsilon(1e-6));
  CHECK_THROWS_AS(uniform_centers<float>(1), Error);
}

TEST_CASE("ties resolve to the lowest index, in both hard and saturated-soft") {
  Tensor<double> c(Shape{2});
  c[0] = -1;
  c[1] = 1;
  Tensor<double> z(Shape{1}, 0.0);  // exactly midway
  CHECK(quantize_hard(z, c)[0] == 0);

  Tensor<double> q = soft_assign(z, c, 1e7);
  CHECK(q[0] == doctest::Approx(0.5));  // symmetric, both survive saturation
  // the argmax rule (first maximum) still picks index 0
  CHECK(q[0] >= q[1]);

  Tensor<double> c4(Shape{4});
  c4[0] = 0;
  c4[1] = 1;
  c4[2] = 2;
  c4[3] = 3;
  Tensor<double> z2(Shape{1}, 1.5);
  CHECK(quantize_hard(z2, c4)[0] == 1);
}

TEST_CASE("hard assignment agrees with saturated soft argmax on a sweep") {
  Tensor<float> c = uniform_centers<float>(8);
  Rng rng(21);
  Tensor<float> z = rand_uniform<float>(Shape{4000}, rng, -3.0, 3.0);
  // sprinkle exact center hits and midpoints
  for (int i = 0; i < 16; ++i) z[i] = c[i % 8];
  for (int i = 0; i < 7; ++i) z[16 + i] = (c[i] + c[i + 1]) / 2;

  Tensor<int32_t> hard = quantize_hard(z, c);
  Tensor<float> q = soft_assign(z, c, 1e7f);
  for (int64_t i = 0; i < z.numel(); ++i) {
    int am = 0;
    for (int k = 1; k < 8; ++k)
      if (q[i * 8 + k] > q[i * 8 + am]) am = k;
    CHECK(hard[i] == am);
  }
}

TEST_CASE("quantize_st: forward is the hard one-hot, lookup reproduces centers exactly") {
  Rng rng(22);
  Tensor<float> zt = rand_uniform<float>(Shape{2, 3, 4, 4}, rng, -2.2, 2.2);
  Tensor<float> ct = uniform_centers<float>(5);
  auto z = make_leaf(zt), c = make_leaf(ct);
  auto q = quantize_st(z, c);
  CHECK(q->value.shape() == Shape{2, 15, 4, 4});

  Tensor<int32_t> codes = quantize_hard(zt, ct);
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 3; ++g)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          for (int l = 0; l < 5; ++l) {
            float want = (l == codes.at(b, g, y, x)) ? 1.0f : 0.0f;
            CHECK(q->value.at(b, g * 5 + l, y, x) == want);
          }
        }

  auto deq = group_lookup(q, c);
  Tensor<float> want = dequantize(codes, ct).reshaped(Shape{2, 3, 4, 4});
  for (int64_t i = 0; i < want.numel(); ++i) CHECK(deq->value[i] == want[i]);

  // one-hot path built from integer codes matches the graph forward
  Tensor<float> oh = codes_to_onehot<float>(codes, 5);
  for (int64_t i = 0; i < oh.numel(); ++i) CHECK(oh[i] == q->value[i]);
}

TEST_CASE("straight-through gradient equals the soft-expectation derivative") {
  // Objective sum(dequantize_st(z)); its backward must match central
  // differences of the *soft* expectation sum_i q_i(tau=1) c_i, evaluated
  // with the independent reference formula.
  Rng rng(23);
  const int L = 5;
  std::vector<double> cvals;
  Tensor<double> ct = uniform_centers<double>(L);
  for (int i = 0; i < L; ++i) cvals.push_back(ct[i]);

  Tensor<double> zt = rand_uniform<double>(Shape{1, 2, 3, 3}, rng, -2.1, 2.1);
  auto z = make_leaf(zt), c = make_leaf(ct);
  auto loss = sum_all(group_lookup(quantize_st(z, c), c));
  backward(loss);

  const double h = 1e-6;
  for (int64_t j = 0; j < zt.numel(); ++j) {
    auto soft_exp = [&](double zv) {
      std::vector<double> q = ref_soft(zv, cvals, 1.0);
      double s = 0;
      for (int i = 0; i < L; ++i) s += q[i] * cvals[i];
      return s;
    };
    double numeric = (soft_exp(zt[j] + h) - soft_exp(zt[j] - h)) / (2 * h);
    CHECK(z->grad[j] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("gradcheck: straight-through center gradients (soft surrogate)") {
  // Verify d/dcenters of sum(group_lookup(quantize_st(z,c), table)) with an
  // independent table, isolating the assignment Jacobian from the lookup.
  Rng rng(24);
  const int L = 4;
  Tensor<double> ct = uniform_centers<double>(L);
  Tensor<double> table = rand_normal<double>(Shape{L}, rng);
  Tensor<double> zt = rand_uniform<double>(Shape{1, 1, 3, 3}, rng, -1.9, 1.9);

  auto z = make_leaf(zt), c = make_leaf(ct), tb = make_leaf(table);
  auto loss = sum_all(group_lookup(quantize_st(z, c), tb));
  backward(loss);

  std::vector<double> cvals;
  for (int i = 0; i < L; ++i) cvals.push_back(ct[i]);
  const double h = 1e-6;
  for (int i = 0; i < L; ++i) {
    auto soft_obj = [&](double cv) {
      std::vector<double> cv2 = cvals;
      cv2[i] = cv;
      double s = 0;
      for (int64_t j = 0; j < zt.numel(); ++j) {
        std::vector<double> e(L);
        double den = 0;
        for (int k = 0; k < L; ++k) {
          e[k] = std::exp(-std::fabs(zt[j] - cv2[k]));
          den += e[k];
        }
        for (int k = 0; k < L; ++k) s += e[k] / den * table[k];
      }
      return s;
    };
    double numeric = (soft_obj(ct[i] + h) - soft_obj(ct[i] - h)) / (2 * h);
    CHECK(c->grad[i] == doctest::Approx(numeric).epsilon(1e-5));
  }

  // table grad: sum over positions of one-hot mass = count of hard hits
  Tensor<int32_t> codes = quantize_hard(zt, ct);
  for (int i = 0; i < L; ++i) {
    double cnt = 0;
    for (int64_t j = 0; j < codes.numel(); ++j)
      if (codes[j] == i) cnt += 1;
    CHECK(tb->grad[i] == doctest::Approx(cnt));
  }
}
