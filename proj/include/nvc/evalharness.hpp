// Rate-distortion evaluation: per-model RD points, curves over a beta
// sweep, foreground/background splits, CSV export.
//
// All scores average unweighted over chunks.  bpp denominators are pixels
// (T*H*W).  Reconstructions are clamped to [0,255] before scoring (the
// export contract), but not rounded.  Evaluation never mutates the model.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "nvc/codec.hpp"
#include "nvc/msssim.hpp"

namespace nvc {

struct RDPoint {
  std::string dataset;
  std::string model;
  double beta = 0.0;
  double bpp_proxy = 0.0;
  double bpp_actual = 0.0;  // payload bytes only
  double bpp_actual_total = 0.0;  // including container header (not in CSV)
  double ms_ssim = 0.0;
  // NaN when no masks were supplied (emitted as empty CSV fields).
  double fg_ms_ssim = std::numeric_limits<double>::quiet_NaN();
  double bg_ms_ssim = std::numeric_limits<double>::quiet_NaN();
};

namespace eval_detail {

inline Tensor<float> clamp_export(const Tensor<float>& x) {
  Tensor<float> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = std::min(255.0f, std::max(0.0f, x.data()[i]));
  return out;
}

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream oss;
  oss << v;
  return oss.str();
}

}  // namespace eval_detail

// Distortion score used everywhere in evaluation: MS-SSIM between the raw
// input and a clamped reconstruction.
inline double eval_ms_ssim(const Tensor<float>& x, const Tensor<float>& xhat) {
  NoGradGuard ng;
  return static_cast<double>(
      ms_ssim(make_const(x), make_const(eval_detail::clamp_export(xhat)))->value[0]);
}

// Full codec pass over every chunk: encode to a real bitstream, decode,
// score.  Masks (when given) add FG/BG MS-SSIM columns.
inline RDPoint rd_point(const Model& m, const std::vector<Tensor<float>>& chunks,
                        const std::vector<Tensor<float>>* masks = nullptr, double beta = 0.0,
                        const std::string& dataset = "", const std::string& model_id = "") {
  NVC_CHECK(!chunks.empty(), "rd_point: no chunks to evaluate");
  if (masks)
    NVC_CHECK(masks->size() == chunks.size(), "rd_point: need one mask tensor per chunk");

  RDPoint p;
  p.dataset = dataset;
  p.model = model_id;
  p.beta = beta;
  double fg = 0.0, bg = 0.0;
  for (size_t i = 0; i < chunks.size(); ++i) {
    const Tensor<float>& x = chunks[i];
    const int chunk_t = x.shape()[0];
    RateReport rr = rate_report(m, x, chunk_t);
    p.bpp_proxy += rr.proxy_bpp;
    p.bpp_actual += rr.actual_bpp_payload;
    p.bpp_actual_total += rr.actual_bpp_total;

    std::vector<uint8_t> stream = encode_video(m, x, chunk_t);
    Tensor<float> recon = eval_detail::clamp_export(decode_video(m, stream));
    NoGradGuard ng;
    if (masks) {
      MsSsimResult<float> ms =
          ms_ssim_components(make_const(x), make_const(recon), &(*masks)[i]);
      p.ms_ssim += static_cast<double>(ms.full->value[0]);
      fg += static_cast<double>(ms.fg->value[0]);
      bg += static_cast<double>(ms.bg->value[0]);
    } else {
      p.ms_ssim += static_cast<double>(ms_ssim(make_const(x), make_const(recon))->value[0]);
    }
  }
  const double inv = 1.0 / static_cast<double>(chunks.size());
  p.bpp_proxy *= inv;
  p.bpp_actual *= inv;
  p.bpp_actual_total *= inv;
  p.ms_ssim *= inv;
  if (masks) {
    p.fg_ms_ssim = fg * inv;
    p.bg_ms_ssim = bg * inv;
  }
  return p;
}

// FG/BG table for one model (requires masks).
struct FgBgReport {
  double fg_ms_ssim = 0.0;
  double bg_ms_ssim = 0.0;
  double ms_ssim = 0.0;
};
inline FgBgReport fg_bg_report(const Model& m, const std::vector<Tensor<float>>& chunks,
                               const std::vector<Tensor<float>>& masks) {
  RDPoint p = rd_point(m, chunks, &masks);
  return FgBgReport{p.fg_ms_ssim, p.bg_ms_ssim, p.ms_ssim};
}

// One evaluated point per model, sorted by actual bpp ascending.
inline std::vector<RDPoint> rd_curve(const std::vector<const Model*>& models,
                                     const std::vector<double>& betas,
                                     const std::vector<Tensor<float>>& chunks,
                                     const std::vector<Tensor<float>>* masks = nullptr,
                                     const std::string& dataset = "") {
  NVC_CHECK(models.size() >= 2, "rd_curve: need at least two models");
  NVC_CHECK(models.size() == betas.size(), "rd_curve: need one beta per model");
  std::vector<RDPoint> points;
  for (size_t i = 0; i < models.size(); ++i)
    points.push_back(rd_point(*models[i], chunks, masks, betas[i], dataset,
                              strcat_("model", i)));
  std::stable_sort(points.begin(), points.end(),
                   [](const RDPoint& a, const RDPoint& b) { return a.bpp_actual < b.bpp_actual; });
  return points;
}

inline std::string rd_csv(const std::vector<RDPoint>& points) {
  std::ostringstream oss;
  oss << "dataset,model,beta,bpp_proxy,bpp_actual,ms_ssim,fg_ms_ssim,bg_ms_ssim\n";
  for (const RDPoint& p : points)
    oss << p.dataset << "," << p.model << "," << p.beta << "," << p.bpp_proxy << ","
        << p.bpp_actual << "," << p.ms_ssim << "," << eval_detail::csv_num(p.fg_ms_ssim) << ","
        << eval_detail::csv_num(p.bg_ms_ssim) << "\n";
  return oss.str();
}

}  // namespace nvc
