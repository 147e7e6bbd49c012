#include <doctest.h>

#include <cmath>

#include "nvc/codemodel.hpp"
#include "nvc/gradcheck.hpp"
#include "nvc/losses.hpp"

using namespace nvc;

namespace {

Tensor<int32_t> rand_codes(const Shape& s, int l, uint64_t seed) {
  Rng rng(seed);
  Tensor<int32_t> c(s);
  for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = static_cast<int32_t>(rng.below(l));
  return c;
}

}  // namespace

// [DERIVED] group_log_softmax equals a direct per-group computation and its
// exponentials sum to one within each group.
TEST_CASE("group_log_softmax: values and normalization") {
  Rng rng(3);
  Tensor<double> lt = rand_normal<double>(Shape{2, 6, 2, 3}, rng, 2.0);
  const int l = 3;
  Var<double> lp = group_log_softmax(make_const(lt), l);
  for (int b = 0; b < 2; ++b)
    for (int g = 0; g < 2; ++g)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) {
          double den = 0.0;
          for (int i = 0; i < l; ++i) den += std::exp(lt.at(b, g * l + i, y, x));
          double psum = 0.0;
          for (int i = 0; i < l; ++i) {
            const double want = lt.at(b, g * l + i, y, x) - std::log(den);
            CHECK(lp->value.at(b, g * l + i, y, x) == doctest::Approx(want).epsilon(1e-9));
            psum += std::exp(lp->value.at(b, g * l + i, y, x));
          }
          CHECK(psum == doctest::Approx(1.0).epsilon(1e-12));
        }
}

// [DERIVED] Rate gradient w.r.t. prior logits passes finite differences, and
// gradients flow simultaneously into the assignments (encoder path) and the
// logits (prior path) — no detaching anywhere.
TEST_CASE("rate_bits: gradients reach logits and assignments") {
  Rng rng(9);
  const int l = 3;
  Tensor<double> lt = rand_normal<double>(Shape{2, 6, 2, 2}, rng);
  Tensor<double> qt = codes_to_onehot<double>(rand_codes(Shape{2, 2, 2, 2}, l, 4), l);
  auto f_logits = [&](const std::vector<Var<double>>& in) {
    return rate_bits(make_const(qt), group_log_softmax(in[0], l));
  };
  CHECK(gradcheck<double>(f_logits, {lt}).max_rel_err < 1e-6);
  auto f_q = [&](const std::vector<Var<double>>& in) {
    return rate_bits(in[0], group_log_softmax(make_const(lt), l));
  };
  CHECK(gradcheck<double>(f_q, {qt}).max_rel_err < 1e-7);

  Var<double> q = make_leaf(qt), lg = make_leaf(lt);
  backward(rate_bits(q, group_log_softmax(lg, l)));
  double qg = 0.0, gg = 0.0;
  for (int64_t i = 0; i < q->grad.numel(); ++i) qg += std::fabs(q->grad[i]);
  for (int64_t i = 0; i < lg->grad.numel(); ++i) gg += std::fabs(lg->grad[i]);
  CHECK(qg > 0.0);
  CHECK(gg > 0.0);
}

// [TRIVIAL] Uniform PMFs (zero logits), L=8: exactly 3 bits per latent.
// [DERIVED] Paper-shaped latents 8x32x20x20: 307200 bits = 1.5 bpp at 160^2.
TEST_CASE("rate_bits: uniform-prior arithmetic") {
  const int l = 8, k = 32, t = 8, h = 20, w = 20;
  Tensor<float> logits(Shape{t, k * l, h, w});
  Tensor<float> q = codes_to_onehot<float>(rand_codes(Shape{t, k, h, w}, l, 11), l);
  NoGradGuard ng;
  Var<float> bits = rate_bits(make_const(q), group_log_softmax(make_const(logits), l));
  // Tolerance is float accumulation noise over ~100k summed terms.
  const double n = static_cast<double>(t) * k * h * w;
  CHECK(static_cast<double>(bits->value[0]) == doctest::Approx(3.0 * n).epsilon(1e-4));
  const double bpp = static_cast<double>(bits->value[0]) / (t * 160.0 * 160.0);
  CHECK(bpp == doctest::Approx(1.5).epsilon(1e-4));
}

// [DERIVED] The training-graph rate of real prior logits matches the
// deterministic evaluator's ideal code length (same model, different
// summation order), within float tolerance.
TEST_CASE("rate_bits agrees with the deterministic evaluator") {
  PriorConfig cfg;
  cfg.variant = PriorVariant::kFrame;
  cfg.groups = 8;
  cfg.codebook = 4;
  cfg.hidden = 4;
  cfg.layers = 4;
  cfg.kernel = 5;
  ParamStore<float> ps(15);
  LatentPrior<float> m(ps, cfg);
  Rng rng(71);
  for (auto& p : ps.params)
    for (int64_t i = 0; i < p->value.numel(); ++i)
      p->value.data()[i] = 0.2f * static_cast<float>(rng.normal());
  Tensor<int32_t> codes = rand_codes(Shape{3, cfg.groups, 6, 5}, cfg.codebook, 5);
  NoGradGuard ng;
  Var<float> q = make_const(codes_to_onehot<float>(codes, cfg.codebook));
  Var<float> bits = rate_bits(q, group_log_softmax(m.logits(q), cfg.codebook));
  PriorEvaluator ev(m);
  const double ideal = ev.ideal_bits(codes);
  CHECK(static_cast<double>(bits->value[0]) == doctest::Approx(ideal).epsilon(2e-4));
}

// [DERIVED] scale_by_plane: values and adjoint.
TEST_CASE("scale_by_plane: values and gradient") {
  Rng rng(5);
  Tensor<double> xt = rand_normal<double>(Shape{2, 3, 2, 2}, rng);
  Tensor<double> plane = rand_uniform<double>(Shape{2, 1, 2, 2}, rng, 0.1, 2.0);
  Var<double> y = scale_by_plane(make_const(xt), plane);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          CHECK(y->value.at(b, c, i, j) ==
                doctest::Approx(xt.at(b, c, i, j) * plane.at(b, 0, i, j)).epsilon(1e-12));
  auto f = [&](const std::vector<Var<double>>& in) {
    return sum_all(mul(scale_by_plane(in[0], plane), in[0]));
  };
  CHECK(gradcheck<double>(f, {xt}).max_rel_err < 1e-7);
}

// [TRIVIAL+DERIVED] Pooled rate weights: all-zero mask gives rho_bg
// everywhere; a half/half 2x2 block pools to 0.5; equal rhos of 1 give
// weight 1 regardless of the mask.
TEST_CASE("rate_weight_plane: pooling and weighting") {
  Tensor<float> mask(Shape{1, 1, 4, 4});
  // Left half foreground; one mixed block: toggle two pixels in the top-right.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) mask.at(0, 0, y, x) = 1.0f;
  mask.at(0, 0, 0, 2) = 1.0f;
  mask.at(0, 0, 1, 3) = 1.0f;
  Tensor<float> w = rate_weight_plane(mask, 2, 0.05f, 0.95f);
  REQUIRE(w.shape() == (Shape{1, 1, 2, 2}));
  CHECK(w.at(0, 0, 0, 0) == doctest::Approx(0.05).epsilon(1e-6));             // pure FG
  CHECK(w.at(0, 0, 1, 1) == doctest::Approx(0.95).epsilon(1e-6));             // pure BG
  CHECK(w.at(0, 0, 0, 1) == doctest::Approx(0.5 * 0.05 + 0.5 * 0.95).epsilon(1e-6));  // mixed

  Tensor<float> zeros(Shape{1, 1, 4, 4});
  Tensor<float> wz = rate_weight_plane(zeros, 2, 0.05f, 0.95f);
  for (int64_t i = 0; i < wz.numel(); ++i) CHECK(wz.data()[i] == doctest::Approx(0.95));
  Tensor<float> wone = rate_weight_plane(mask, 2, 1.0f, 1.0f);
  for (int64_t i = 0; i < wone.numel(); ++i) CHECK(wone.data()[i] == doctest::Approx(1.0));
}

// [DERIVED] Closed-form semantic rate: uniform PMFs cost exactly log2(L)
// bits per code, so the weighted total is log2(L)*K*sum(weights).
TEST_CASE("semantic_rate_bits: closed form under uniform PMFs") {
  const int l = 8, k = 4, t = 2, lh = 2, lw = 2, f = 8;
  Tensor<float> mask(Shape{t, 1, lh * f, lw * f});
  for (int b = 0; b < t; ++b)
    for (int y = 0; y < lh * f; ++y)
      for (int x = 0; x < lw * f / 2; ++x) mask.at(b, 0, y, x) = 1.0f;  // left half FG
  Tensor<float> logits(Shape{t, k * l, lh, lw});
  Tensor<float> q = codes_to_onehot<float>(rand_codes(Shape{t, k, lh, lw}, l, 21), l);
  Tensor<float> wp = rate_weight_plane(mask, f, 0.05f, 0.95f);
  NoGradGuard ng;
  Var<float> bits = semantic_rate_bits(make_const(q), group_log_softmax(make_const(logits), l), wp);
  // Per frame: one FG latent column (weight .05) and one BG column (.95).
  const double per_pos = 3.0 * k;
  const double want = t * lh * (0.05 + 0.95) * per_pos;
  CHECK(static_cast<double>(bits->value[0]) == doctest::Approx(want).epsilon(1e-6));

  Tensor<float> zero_mask(Shape{t, 1, lh * f, lw * f});
  Var<float> zb = semantic_rate_bits(make_const(q), group_log_softmax(make_const(logits), l),
                                     rate_weight_plane(zero_mask, f, 0.05f, 0.95f));
  Var<float> plain = rate_bits(make_const(q), group_log_softmax(make_const(logits), l));
  CHECK(static_cast<double>(zb->value[0]) ==
        doctest::Approx(0.95 * static_cast<double>(plain->value[0])).epsilon(1e-6));
}

// [TRIVIAL] total_loss: beta=0 leaves distortion alone; perfect
// reconstruction leaves exactly the beta-weighted rate term.
TEST_CASE("total_loss: structure of the objective") {
  const int l = 4, k = 2, t = 2, hw = 32;
  Rng rng(17);
  Tensor<float> xt = rand_uniform<float>(Shape{t, 1, hw, hw}, rng, 0.0, 255.0);
  Tensor<float> xhat = xt;
  for (int64_t i = 0; i < xhat.numel(); ++i)
    xhat.data()[i] += 3.0f * static_cast<float>(rng.normal());
  Tensor<float> logits_t = rand_normal<float>(Shape{t, k * l, hw / 8, hw / 8}, rng);
  Tensor<float> q = codes_to_onehot<float>(rand_codes(Shape{t, k, hw / 8, hw / 8}, l, 31), l);
  NoGradGuard ng;

  LossBreakdown<float> at0 = total_loss(make_const(xt), make_const(xhat), make_const(q),
                                        make_const(logits_t), l, 0.0f);
  CHECK(at0.total->value[0] == at0.distortion->value[0]);
  CHECK(at0.rate->value[0] > 0.0f);
  CHECK(at0.pixels == static_cast<int64_t>(t) * hw * hw);

  LossBreakdown<float> perfect = total_loss(make_const(xt), make_const(xt), make_const(q),
                                            make_const(logits_t), l, 0.5f);
  CHECK(perfect.distortion->value[0] == 0.0f);
  const double want = 0.5 * static_cast<double>(perfect.rate->value[0]) * std::log(2.0) /
                      static_cast<double>(perfect.pixels);
  CHECK(static_cast<double>(perfect.total->value[0]) == doctest::Approx(want).epsilon(1e-6));
}

// [TRIVIAL] Semantic distortion at alpha=0.5 is the plain average of the
// FG and BG distortions; [DERIVED] at alpha=0.95 corrupting the foreground
// costs more than the identical corruption applied to the background.
TEST_CASE("semantic_total_loss: alpha weighting and FG emphasis") {
  const int l = 4, k = 2, t = 1, hw = 32;
  Rng rng(23);
  Tensor<float> xt = rand_uniform<float>(Shape{t, 1, hw, hw}, rng, 40.0, 215.0);
  Tensor<float> mask(Shape{t, 1, hw, hw});
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw / 2; ++x) mask.at(0, 0, y, x) = 1.0f;  // left half FG
  Tensor<float> logits_t(Shape{t, k * l, hw / 8, hw / 8});
  Tensor<float> q = codes_to_onehot<float>(rand_codes(Shape{t, k, hw / 8, hw / 8}, l, 41), l);
  NoGradGuard ng;

  // Identical noise pattern pasted into FG (left) vs mirrored into BG (right).
  Tensor<float> noise = rand_normal<float>(Shape{t, 1, hw, hw / 2}, rng, 25.0);
  Tensor<float> hit_fg = xt, hit_bg = xt;
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw / 2; ++x) {
      hit_fg.at(0, 0, y, x) += noise.at(0, 0, y, x);
      hit_bg.at(0, 0, y, hw - 1 - x) += noise.at(0, 0, y, x);
    }

  SemanticLossConfig<float> half;
  half.alpha = 0.5f;
  LossBreakdown<float> sym = semantic_total_loss(make_const(xt), make_const(hit_fg), make_const(q),
                                                 make_const(logits_t), l, 0.0f, mask, half);
  MsSsimResult<float> comp = ms_ssim_components(make_const(xt), make_const(hit_fg), &mask);
  const double fg_d = 1.0 - static_cast<double>(comp.fg->value[0]);
  const double bg_d = 1.0 - static_cast<double>(comp.bg->value[0]);
  CHECK(static_cast<double>(sym.distortion->value[0]) ==
        doctest::Approx(0.5 * (fg_d + bg_d)).epsilon(1e-6));

  SemanticLossConfig<float> sc;  // alpha = 0.95
  LossBreakdown<float> on_fg = semantic_total_loss(make_const(xt), make_const(hit_fg),
                                                   make_const(q), make_const(logits_t), l, 0.0f,
                                                   mask, sc);
  LossBreakdown<float> on_bg = semantic_total_loss(make_const(xt), make_const(hit_bg),
                                                   make_const(q), make_const(logits_t), l, 0.0f,
                                                   mask, sc);
  CHECK(on_fg.distortion->value[0] > on_bg.distortion->value[0]);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nvc/evalharness.hpp"
#include "nvc/trainer.hpp"

namespace {

ModelConfig trainer_test_config(PriorVariant v = PriorVariant::kFrame,
                                AeMode mode = AeMode::kFrame2d, uint64_t seed = 5) {
  ModelConfig c;
  c.ae.mode = mode;
  c.ae.input_channels = 3;
  c.ae.latent_channels = 8;
  c.ae.front_channels = 8;
  c.ae.hidden_channels = 12;
  c.ae.res_blocks = 1;
  c.prior.variant = v;
  c.prior.groups = 8;
  c.prior.codebook = 8;
  c.prior.hidden = 2;
  c.prior.layers = 2;
  c.prior.kernel = 3;
  c.prior.gru_hidden = 4;
  c.seed = seed;
  return c;
}

std::vector<Tensor<float>> smooth_clips(int n, int t, int h, int w, uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<float>> out;
  for (int k = 0; k < n; ++k) {
    double fy = 0.1 + 0.3 * rng.uniform(), fx = 0.1 + 0.3 * rng.uniform();
    double ph = 6.28 * rng.uniform();
    Tensor<float> x(Shape{t, 3, h, w});
    for (int tt = 0; tt < t; ++tt)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            x.at(tt, c, i, j) = static_cast<float>(
                127.5 + 110.0 * std::sin(fy * (i + 2.0 * tt) + fx * j + ph + 1.7 * c));
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Tensor<float>> snapshot_params(const ParamStore<float>& ps) {
  std::vector<Tensor<float>> out;
  for (const auto& p : ps.params) out.push_back(p->value);
  return out;
}

bool params_equal(const std::vector<Tensor<float>>& a, const ParamStore<float>& ps) {
  for (size_t i = 0; i < a.size(); ++i) {
    const Tensor<float>& b = ps.params[i]->value;
    for (int64_t j = 0; j < b.numel(); ++j)
      if (a[i].data()[j] != b.data()[j]) return false;
  }
  return true;
}

}  // namespace

// [PAPER] The epoch-based schedule: with decay 0.1 every 40 epochs, the
// learning rate is 1e-4 until epoch 40, 1e-5 from 40, 1e-6 from 80.
TEST_CASE("trainer: epoch learning-rate schedule") {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.epochs = 100;
  const int64_t spe = 7;  // arbitrary steps per epoch
  auto lr_at_epoch = [&](int64_t e) { return trainer_detail::lr_at(cfg, e * spe, spe); };
  CHECK(lr_at_epoch(0) == doctest::Approx(1e-4));
  CHECK(lr_at_epoch(39) == doctest::Approx(1e-4));
  CHECK(lr_at_epoch(40) == doctest::Approx(1e-5));
  CHECK(lr_at_epoch(79) == doctest::Approx(1e-5));
  CHECK(lr_at_epoch(80) == doctest::Approx(1e-6));

  TrainConfig st;
  st.lr = 1e-4;
  st.steps = 100;
  st.decay_every_steps = 10;
  CHECK(trainer_detail::lr_at(st, 9, 1) == doctest::Approx(1e-4));
  CHECK(trainer_detail::lr_at(st, 10, 1) == doctest::Approx(1e-5));
}

// [TRIVIAL] Zero steps is the identity on weights (fine-tune contract), and
// a short run changes them.
TEST_CASE("trainer: zero steps is identity") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(2, 2, 16, 16, 3);
  std::vector<Tensor<float>> before = snapshot_params(m.ps);

  TrainConfig cfg;
  cfg.steps = 0;
  TrainStats st = train(m, data, nullptr, cfg);
  CHECK(st.steps_run == 0);
  CHECK(params_equal(before, m.ps));

  cfg.steps = 2;
  train(m, data, nullptr, cfg);
  CHECK(!params_equal(before, m.ps));
}

// [TRIVIAL] beta=0 sends no gradient into the prior: its parameters are
// bitwise unchanged while autoencoder parameters move.
TEST_CASE("trainer: beta zero trains only the autoencoder") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 4);
  std::vector<Tensor<float>> before = snapshot_params(m.ps);

  TrainConfig cfg;
  cfg.beta = 0.0;
  cfg.steps = 3;
  train(m, data, nullptr, cfg);

  bool prior_same = true, ae_changed = false;
  for (size_t i = 0; i < m.ps.params.size(); ++i) {
    const std::string& name = m.ps.params[i]->name;
    bool same = true;
    const Tensor<float>& now = m.ps.params[i]->value;
    for (int64_t j = 0; j < now.numel() && same; ++j) same = before[i].data()[j] == now.data()[j];
    if (name.rfind("prior.", 0) == 0 && !same) prior_same = false;
    if (name.rfind("ae.", 0) == 0 && !same) ae_changed = true;
  }
  CHECK(prior_same);
  CHECK(ae_changed);
}

// Rate-gradient path: with beta > 0 and the distortion term removed, encoder
// parameters still receive nonzero gradients (the rate term reaches the
// encoder through the soft assignments; nothing is detached).
TEST_CASE("trainer: rate gradients reach the encoder") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 6);

  Var<float> x = make_const(data[0]);
  Var<float> z = m.ae.encode(x, true);
  Var<float> q = quantize_st(z, m.codebook);
  Var<float> logp = group_log_softmax(m.prior.logits(q), m.cfg.prior.codebook);
  zero_grads(m.ps);
  backward(rate_bits(q, logp));

  double enc_grad = 0.0;
  for (const auto& p : m.ps.params)
    if (p->name.rfind("ae.e", 0) == 0 && !p->grad.empty())
      for (int64_t j = 0; j < p->grad.numel(); ++j)
        enc_grad += std::abs(static_cast<double>(p->grad[j]));
  CHECK(enc_grad > 0.0);
  zero_grads(m.ps);
}

// [DERIVED] Convergence oracle at desk scale: overfitting two tiny clips
// strictly decreases the loss moving average, and the metrics CSV logs one
// row per step.
TEST_CASE("trainer: loss decreases while overfitting") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 8);

  TrainConfig cfg;
  cfg.steps = 60;
  cfg.lr = 3e-4;
  cfg.beta = 0.05;
  std::ostringstream csv;
  TrainStats st = train(m, data, nullptr, cfg, &csv);
  CHECK(st.steps_run == 60);

  // Parse totals back out of the CSV.
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,distortion,rate_bpp,total,lr");
  std::vector<double> totals;
  while (std::getline(in, line)) {
    size_t p1 = line.rfind(',');
    size_t p0 = line.rfind(',', p1 - 1);
    totals.push_back(std::stod(line.substr(p0 + 1, p1 - p0 - 1)));
  }
  REQUIRE(totals.size() == 60);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) head += totals[static_cast<size_t>(i)];
  for (int i = 50; i < 60; ++i) tail += totals[static_cast<size_t>(i)];
  CHECK(tail < head);
  CHECK(st.best_total <= totals.front());
}

// [TRIVIAL] Non-finite input poisons the gradients (hard quantization and
// the stabilizing mean clamps keep the forward loss finite); training must
// abort with a diagnostic before the optimizer applies the poisoned step.
TEST_CASE("trainer: divergence aborts with a state dump") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 9);
  data[0].data()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_WITH_AS(train(m, data, nullptr, cfg), doctest::Contains("diverged"), Error);
}

// [TRIVIAL] Degenerate semantic weights (uniform 0.5 mask, rho_fg = rho_bg
// = 1) reproduce the plain objective on one batch.
TEST_CASE("trainer: degenerate semantic weights match plain loss") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 10);
  Tensor<float> mask(Shape{2, 1, 16, 16}, 0.5f);

  TrainConfig plain;
  plain.beta = 0.1;
  TrainConfig sem = plain;
  sem.semantic = true;
  sem.sem.alpha = 0.5f;
  sem.sem.rho_fg = 1.0f;
  sem.sem.rho_bg = 1.0f;

  NoGradGuard ng;
  LossBreakdown<float> a = trainer_detail::chunk_loss(m, data[0], nullptr, plain, true);
  LossBreakdown<float> b = trainer_detail::chunk_loss(m, data[0], &mask, sem, true);
  CHECK(static_cast<double>(b.total->value[0]) ==
        doctest::Approx(static_cast<double>(a.total->value[0])).epsilon(1e-6));
  CHECK(static_cast<double>(b.rate->value[0]) ==
        doctest::Approx(static_cast<double>(a.rate->value[0])).epsilon(1e-6));
}

// [TRIVIAL] Checkpoint round-trip through training: save -> load -> save is
// byte-identical (manifest and data files).
TEST_CASE("trainer: checkpoint save-load-save is byte identical") {
  namespace fs = std::filesystem;
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 11);
  TrainConfig cfg;
  cfg.steps = 2;
  train(m, data, nullptr, cfg, nullptr, "ckpt_trainer_a.nvcm");

  LoadedCheckpoint lc = load_checkpoint("ckpt_trainer_a.nvcm");
  save_checkpoint("ckpt_trainer_b.nvcm", lc.model, lc.step);

  auto bytes = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(bytes("ckpt_trainer_a.nvcm") == bytes("ckpt_trainer_b.nvcm"));
  CHECK(bytes("ckpt_trainer_a.nvcm.data") == bytes("ckpt_trainer_b.nvcm.data"));
  for (const char* p : {"ckpt_trainer_a.nvcm", "ckpt_trainer_a.nvcm.data",
                        "ckpt_trainer_a.nvcm.best", "ckpt_trainer_a.nvcm.best.data",
                        "ckpt_trainer_b.nvcm", "ckpt_trainer_b.nvcm.data"})
    fs::remove(p);
}

// [TRIVIAL] Fixed seed, single thread: two training runs from identical
// initialization produce bitwise-identical weights.
TEST_CASE("trainer: bitwise reproducibility under fixed seed") {
  std::vector<Tensor<float>> data = smooth_clips(3, 2, 16, 16, 12);
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 2;

  Model a(trainer_test_config());
  Model b(trainer_test_config());
  train(a, data, nullptr, cfg);
  train(b, data, nullptr, cfg);
  CHECK(params_equal(snapshot_params(a.ps), b.ps));
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

// [TRIVIAL] Identity reconstruction scores MS-SSIM exactly 1.
TEST_CASE("eval: identity reconstruction scores one") {
  Rng rng(13);
  Tensor<float> x = rand_uniform<float>(Shape{2, 3, 32, 32}, rng, 0.0, 255.0);
  CHECK(eval_ms_ssim(x, x) == 1.0);
}

// [DERIVED] Untrained uniform-prior model with L=8, K=32 at stride 8:
// bpp_proxy is exactly 32*3/64 = 1.5, and the actual payload exceeds the
// proxy by at most the coder overhead bound.
TEST_CASE("eval: untrained rd point matches shape arithmetic") {
  ModelConfig c = trainer_test_config();
  c.ae.latent_channels = 32;
  c.prior.groups = 32;
  Model m(c);
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 32, 32, 14);

  RDPoint p = rd_point(m, data, nullptr, 0.1, "synthetic", "untrained");
  CHECK(p.bpp_proxy == doctest::Approx(1.5).epsilon(1e-4));
  CHECK(p.bpp_actual >= p.bpp_proxy - 64.0 / (2.0 * 32 * 32));
  const double pixels = 2.0 * 32 * 32;
  CHECK(p.bpp_actual - p.bpp_proxy <= 0.02 * p.bpp_proxy + (32.0 + 64.0) / pixels);
  CHECK(p.bpp_actual_total > p.bpp_actual);
  CHECK(p.ms_ssim > 0.0);
  CHECK(p.ms_ssim < 1.0);
  CHECK(std::isnan(p.fg_ms_ssim));

  // Evaluation is read-only.
  CHECK(model_hash(m.ps) == model_hash(Model(c).ps));
}

// [TRIVIAL] A duplicated model yields identical points; the CSV has one
// header plus one row per model with the pinned schema; points sort by bpp.
TEST_CASE("eval: rd curve determinism and csv schema") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 15);
  std::vector<const Model*> models = {&m, &m, &m, &m};
  std::vector<double> betas = {0.1, 0.3, 0.5, 0.7};
  std::vector<RDPoint> pts = rd_curve(models, betas, data, nullptr, "syn");
  REQUIRE(pts.size() == 4);
  for (size_t i = 1; i < 4; ++i) {
    CHECK(pts[i].bpp_actual == pts[0].bpp_actual);
    CHECK(pts[i].ms_ssim == pts[0].ms_ssim);
    CHECK(pts[i].bpp_actual >= pts[i - 1].bpp_actual);
  }
  std::istringstream csv(rd_csv(pts));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "dataset,model,beta,bpp_proxy,bpp_actual,ms_ssim,fg_ms_ssim,bg_ms_ssim");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(line.substr(0, 4) == "syn,");
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
  }
  CHECK(rows == 4);
}

// [TRIVIAL]+[DERIVED] FG/BG table: an all-FG mask makes the FG column equal
// the plain score, and corrupting only the FG region of the input drops FG
// MS-SSIM below BG.
TEST_CASE("eval: fg/bg report") {
  Model m(trainer_test_config());
  std::vector<Tensor<float>> data = smooth_clips(1, 2, 16, 16, 16);

  SUBCASE("all-FG mask equals plain score") {
    std::vector<Tensor<float>> masks = {Tensor<float>(Shape{2, 1, 16, 16}, 1.0f)};
    RDPoint p = rd_point(m, data, &masks);
    CHECK(p.fg_ms_ssim == doctest::Approx(p.ms_ssim).epsilon(1e-6));
  }
  SUBCASE("corrupted FG scores below BG") {
    Tensor<float> mask(Shape{2, 1, 16, 16});
    for (int t = 0; t < 2; ++t)
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 8; ++j) mask.at(t, 0, i, j) = 1.0f;  // left half FG
    Tensor<float> dirty = data[0];
    Rng rng(17);
    for (int t = 0; t < 2; ++t)
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i)
          for (int j = 0; j < 8; ++j)
            dirty.at(t, c, i, j) = static_cast<float>(
                std::min(255.0, std::max(0.0, dirty.at(t, c, i, j) + 60.0 * rng.normal())));
    NoGradGuard ng;
    MsSsimResult<float> ms = ms_ssim_components(make_const(data[0]), make_const(dirty), &mask);
    CHECK(ms.fg->value[0] < ms.bg->value[0]);
  }
}
