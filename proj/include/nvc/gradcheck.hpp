#pragma once

#include "nvc/autodiff.hpp"

namespace nvc {

// Central-difference gradient verification. Builds the graph once for the
// analytic gradients, then perturbs input entries one at a time. For large
// inputs a deterministic subsample of entries is checked.
//
// Relative error: |analytic - numeric| / max(1, |analytic|, |numeric|).
struct GradCheckReport {
  double max_rel_err = 0.0;
  int input_index = -1;
  int64_t entry = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

template <typename S>
GradCheckReport gradcheck(
    const std::function<Var<S>(const std::vector<Var<S>>&)>& f,
    const std::vector<Tensor<S>>& inputs, double h = 1e-5, int64_t max_entries_per_input = 256,
    uint64_t sample_seed = 7) {
  std::vector<Var<S>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(make_leaf(t));

  Var<S> out = f(leaves);
  NVC_CHECK(out->value.numel() == 1, "gradcheck: objective must be scalar");
  backward(out);

  auto eval_at = [&](int which, int64_t entry, S v) -> double {
    NoGradGuard ng;
    std::vector<Var<S>> probe;
    probe.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) probe.push_back(make_const(inputs[i]));
    probe[which]->value[entry] = v;
    return static_cast<double>(f(probe)->value[0]);
  };

  GradCheckReport rep;
  Rng rng(sample_seed);
  for (size_t which = 0; which < inputs.size(); ++which) {
    const Tensor<S>& t = inputs[which];
    std::vector<int64_t> idx;
    if (t.numel() <= max_entries_per_input) {
      for (int64_t i = 0; i < t.numel(); ++i) idx.push_back(i);
    } else {
      for (int64_t i = 0; i < max_entries_per_input; ++i)
        idx.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(t.numel()))));
    }
    for (int64_t e : idx) {
      S orig = t[e];
      double fp = eval_at(static_cast<int>(which), e, orig + static_cast<S>(h));
      double fm = eval_at(static_cast<int>(which), e, orig - static_cast<S>(h));
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = leaves[which]->grad.empty()
                            ? 0.0
                            : static_cast<double>(leaves[which]->grad[e]);
      double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
      double rel = std::fabs(analytic - numeric) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.input_index = static_cast<int>(which);
        rep.entry = e;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace nvc
