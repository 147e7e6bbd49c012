#pragma once

#include "nvc/nn_layers.hpp"

namespace nvc {

// Adam with bias correction and global-norm gradient clipping. State vectors
// are parallel to the store's parameter list.
template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  int64_t step = 0;

  explicit AdamState(const ParamStore<S>& ps) {
    for (const auto& p : ps.params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }
};

template <typename S>
void zero_grads(ParamStore<S>& ps) {
  for (auto& p : ps.params)
    if (!p->grad.empty()) p->grad.zero();
}

// Global (all-parameter) gradient L2 norm.
template <typename S>
double grad_norm(const ParamStore<S>& ps) {
  double sq = 0.0;
  for (const auto& p : ps.params) {
    if (p->grad.empty()) continue;
    for (int64_t i = 0; i < p->grad.numel(); ++i)
      sq += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
  }
  return std::sqrt(sq);
}

// Returns the pre-clip global gradient norm.
template <typename S>
double adam_step(ParamStore<S>& ps, AdamState<S>& st, S lr, S clip_norm = S(5), S beta1 = S(0.9),
                 S beta2 = S(0.999), S eps = S(1e-8)) {
  NVC_CHECK(st.m.size() == ps.params.size(), "adam_step: state/param count mismatch");
  double norm = grad_norm(ps);
  S scale = S(1);
  if (clip_norm > S(0) && norm > static_cast<double>(clip_norm))
    scale = static_cast<S>(static_cast<double>(clip_norm) / norm);

  st.step += 1;
  S bc1 = S(1) - std::pow(beta1, static_cast<S>(st.step));
  S bc2 = S(1) - std::pow(beta2, static_cast<S>(st.step));
  for (size_t k = 0; k < ps.params.size(); ++k) {
    auto& p = ps.params[k];
    if (p->grad.empty()) continue;
    Tensor<S>& m = st.m[k];
    Tensor<S>& v = st.v[k];
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      S g = p->grad[i] * scale;
      m[i] = beta1 * m[i] + (S(1) - beta1) * g;
      v[i] = beta2 * v[i] + (S(1) - beta2) * g * g;
      S mhat = m[i] / bc1;
      S vhat = v[i] / bc2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return norm;
}

}  // namespace nvc
