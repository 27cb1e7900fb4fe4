#pragma once

// Finite-difference gradient verification. The analytic gradient from the
// tape is compared against central differences computed by re-running the
// forward pass with perturbed parameters; double precision only.

#include <cstddef>
#include <functional>
#include <vector>

#include "mave/rng.hpp"
#include "mave/tensor.hpp"

namespace mave {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t checked = 0;
};

// params: leaves to verify. make_loss: builds the scalar loss from scratch
// using the given context (must be deterministic and re-runnable).
// max_per_param: cap on coordinates checked per tensor (sampled with rng when
// the tensor is larger; all coordinates otherwise).
inline GradCheckResult grad_check(
    const std::vector<Tensor<double>*>& params,
    const std::function<Tensor<double>(Context<double>&)>& make_loss,
    double h = 1e-5, size_t max_per_param = static_cast<size_t>(-1),
    Rng* rng = nullptr) {
  // Analytic pass.
  Tape<double> tape;
  for (auto* p : params) tape.watch(*p);
  Context<double> rec{&tape, nullptr};
  Tensor<double> loss = make_loss(rec);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(tape.grad(*p));

  // Numeric pass.
  GradCheckResult res;
  Context<double> pure{nullptr, nullptr};
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    p.node = -1;  // leave no stale tape reference
    size_t n = static_cast<size_t>(p.numel());
    std::vector<size_t> idx;
    if (n <= max_per_param || !rng) {
      idx.resize(n);
      for (size_t i = 0; i < n; ++i) idx[i] = i;
      if (idx.size() > max_per_param) idx.resize(max_per_param);
    } else {
      idx.resize(max_per_param);
      for (auto& i : idx) i = static_cast<size_t>(rng->below(n));
    }
    for (size_t i : idx) {
      double orig = p.mut()[i];
      p.mut()[i] = orig + h;
      double lp = make_loss(pure).at(0);
      p.mut()[i] = orig - h;
      double lm = make_loss(pure).at(0);
      p.mut()[i] = orig;
      double numeric = (lp - lm) / (2.0 * h);
      double a = analytic[pi][i];
      double abs_err = std::fabs(a - numeric);
      double rel = abs_err / std::max(1e-6, std::fabs(a) + std::fabs(numeric));
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace mave
