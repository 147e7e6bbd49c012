// Training loop for the joint rate-distortion objective, covering plain,
// semantic (mask-weighted), and fine-tuning runs.
//
// The dataset is a list of (T,C,H,W) chunks.  Each optimizer step
// accumulates gradients over batch_size chunks (micro-batching keeps graph
// memory at one chunk), clips the global gradient norm, and applies Adam.
// The learning rate decays by a factor per epoch span (paper schedule) or
// per step span (desk-scale runs).  Batchnorm switches to its running
// statistics for the final stretch of training so the normalization used
// while learning matches the one the codec uses at encode/decode time.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "nvc/adam.hpp"
#include "nvc/checkpoint.hpp"
#include "nvc/losses.hpp"
#include "nvc/model.hpp"

namespace nvc {

struct TrainConfig {
  double beta = 0.1;          // rate weight; 0 degenerates to pure AE training
  int batch_size = 1;         // chunks accumulated per optimizer step
  double lr = 1e-4;
  double lr_decay = 0.1;      // multiplicative decay factor
  int decay_every_epochs = 40;
  int epochs = 0;             // epoch-based run length (paper schedule)
  int steps = 0;              // step-based run length (desk scale); wins if > 0
  int decay_every_steps = 0;  // step-based decay period; 0 = no step decay
  double clip_norm = 5.0;
  bool semantic = false;
  SemanticLossConfig<float> sem;
  double bn_freeze_frac = 0.95;  // fraction of the run after which BN stats freeze
  uint64_t seed = 1;

  void validate() const {
    NVC_CHECK(beta >= 0.0, "train: beta must be nonnegative");
    NVC_CHECK(batch_size >= 1, "train: batch size must be positive");
    NVC_CHECK(lr > 0.0 && lr_decay > 0.0, "train: bad learning-rate settings");
    NVC_CHECK(steps >= 0 && epochs >= 0, "train: bad run length");
    NVC_CHECK(bn_freeze_frac >= 0.0 && bn_freeze_frac <= 1.0, "train: bad freeze fraction");
  }
};

struct StepRecord {
  int64_t step = -1;
  double distortion = 0.0;
  double rate_bpp = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct TrainStats {
  int64_t steps_run = 0;
  StepRecord last;
  double best_total = 0.0;
  int64_t best_step = -1;
};

namespace trainer_detail {

inline double lr_at(const TrainConfig& cfg, int64_t step, int64_t steps_per_epoch) {
  int64_t period = 0;
  if (cfg.steps > 0) {
    period = cfg.decay_every_steps;
  } else if (cfg.decay_every_epochs > 0) {
    period = static_cast<int64_t>(cfg.decay_every_epochs) * steps_per_epoch;
  }
  if (period <= 0) return cfg.lr;
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(step / period));
}

// One chunk's loss graph.  `bn_training` selects batch vs running statistics
// in the autoencoder; the quantizer and prior have no normalization state.
inline LossBreakdown<float> chunk_loss(const Model& m, const Tensor<float>& chunk,
                                       const Tensor<float>* mask, const TrainConfig& cfg,
                                       bool bn_training) {
  Var<float> x = make_const(chunk);
  Var<float> z = m.ae.encode(x, bn_training);
  Var<float> q = quantize_st(z, m.codebook);
  Var<float> xhat = m.ae.decode(group_lookup(q, m.codebook), bn_training);
  Var<float> logits = m.prior.logits(q);
  const float beta = static_cast<float>(cfg.beta);
  if (cfg.semantic) {
    NVC_CHECK(mask != nullptr, "semantic training needs a mask per chunk");
    return semantic_total_loss(x, xhat, q, logits, m.cfg.prior.codebook, beta, *mask, cfg.sem);
  }
  return total_loss(x, xhat, q, logits, m.cfg.prior.codebook, beta);
}

struct ParamSnapshot {
  std::vector<Tensor<float>> params, buffers;

  void capture(const ParamStore<float>& ps) {
    params.clear();
    buffers.clear();
    for (const auto& p : ps.params) params.push_back(p->value);
    for (const auto& b : ps.buffers) buffers.push_back(*b.tensor);
  }
  void restore(ParamStore<float>& ps) const {
    for (size_t i = 0; i < params.size(); ++i) ps.params[i]->value = params[i];
    for (size_t i = 0; i < buffers.size(); ++i) *ps.buffers[i].tensor = buffers[i];
  }
  bool empty() const { return params.empty(); }
};

}  // namespace trainer_detail

// Trains `m` in place.  `masks` must align 1:1 with `chunks` when
// cfg.semantic is set.  Per-step metrics go to `metrics` as CSV when given.
// When `ckpt_path` is nonempty, the final weights land there and the
// best-total weights at "<ckpt_path>.best".  Fine-tuning is this same
// function on a loaded model: the schedule and optimizer state restart.
inline TrainStats train(Model& m, const std::vector<Tensor<float>>& chunks,
                        const std::vector<Tensor<float>>* masks, const TrainConfig& cfg,
                        std::ostream* metrics = nullptr, const std::string& ckpt_path = "") {
  cfg.validate();
  NVC_CHECK(!chunks.empty(), "train: dataset is empty");
  if (cfg.semantic)
    NVC_CHECK(masks != nullptr && masks->size() == chunks.size(),
              "train: semantic run needs one mask tensor per chunk");

  const int64_t n = static_cast<int64_t>(chunks.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps =
      cfg.steps > 0 ? cfg.steps : static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  const int64_t freeze_at =
      static_cast<int64_t>(std::ceil(cfg.bn_freeze_frac * static_cast<double>(total_steps)));

  std::vector<int64_t> order(chunks.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed);
  int64_t cursor = n;  // forces a shuffle before the first draw

  AdamState<float> opt(m.ps);
  zero_grads(m.ps);
  TrainStats stats;
  trainer_detail::ParamSnapshot best;

  if (metrics) *metrics << "step,distortion,rate_bpp,total,lr\n";

  for (int64_t step = 0; step < total_steps; ++step) {
    const double lr = trainer_detail::lr_at(cfg, step, steps_per_epoch);
    const bool bn_training = step < freeze_at;

    double sum_dist = 0.0, sum_bpp = 0.0, sum_total = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == n) {
        for (int64_t i = n - 1; i > 0; --i)
          std::swap(order[static_cast<size_t>(i)],
                    order[static_cast<size_t>(shuffle_rng.below(static_cast<uint64_t>(i + 1)))]);
        cursor = 0;
      }
      const int64_t idx = order[static_cast<size_t>(cursor++)];
      const Tensor<float>* mask =
          cfg.semantic ? &(*masks)[static_cast<size_t>(idx)] : nullptr;
      LossBreakdown<float> lb = trainer_detail::chunk_loss(
          m, chunks[static_cast<size_t>(idx)], mask, cfg, bn_training);
      backward(mul_scalar(lb.total, 1.0f / static_cast<float>(cfg.batch_size)));
      sum_dist += lb.dist();
      sum_bpp += lb.bpp();
      sum_total += static_cast<double>(lb.total->value[0]);
    }
    const double inv_b = 1.0 / cfg.batch_size;
    StepRecord rec{step, sum_dist * inv_b, sum_bpp * inv_b, sum_total * inv_b, lr};
    const double gnorm = grad_norm(m.ps);
    if (!std::isfinite(rec.total) || !std::isfinite(rec.distortion) ||
        !std::isfinite(rec.rate_bpp) || !std::isfinite(gnorm)) {
      throw Error(strcat_("training diverged at step ", step, ": total=", rec.total,
                          " distortion=", rec.distortion, " rate_bpp=", rec.rate_bpp,
                          " grad_norm=", gnorm, " lr=", lr));
    }
    adam_step(m.ps, opt, static_cast<float>(lr), static_cast<float>(cfg.clip_norm));
    zero_grads(m.ps);

    if (metrics)
      *metrics << rec.step << "," << rec.distortion << "," << rec.rate_bpp << "," << rec.total
               << "," << rec.lr << "\n";
    if (stats.best_step < 0 || rec.total < stats.best_total) {
      stats.best_total = rec.total;
      stats.best_step = step;
      if (!ckpt_path.empty()) best.capture(m.ps);
    }
    stats.last = rec;
    stats.steps_run = step + 1;
  }

  if (!ckpt_path.empty()) {
    save_checkpoint(ckpt_path, m, stats.steps_run);
    if (!best.empty()) {
      trainer_detail::ParamSnapshot current;
      current.capture(m.ps);
      best.restore(m.ps);
      save_checkpoint(ckpt_path + ".best", m, stats.best_step + 1);
      current.restore(m.ps);
    }
  }
  return stats;
}

}  // namespace nvc
