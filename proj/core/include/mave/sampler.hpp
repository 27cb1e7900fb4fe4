#pragma once

// Nucleus (top-p) sampling over logits, with an explicit helper exposing the
// minimal candidate set so tests can verify membership.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mave/errors.hpp"
#include "mave/rng.hpp"

namespace mave {

struct GenerationParams {
  double top_p = 0.8;
  double temperature = 1.0;
  int64_t max_frames_per_span = 600;
  uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw data_error("generation: top_p must be in (0,1]");
    if (!(temperature > 0.0)) throw data_error("generation: temperature must be > 0");
    if (max_frames_per_span < 1 || max_frames_per_span > 600)
      throw data_error("generation: max_frames_per_span must be in [1,600]");
  }
};

// Softmax probabilities (double) of logits/temperature.
inline std::vector<double> softmax_probs(const double* logits, size_t n,
                                         double temperature) {
  std::vector<double> p(n);
  double mx = logits[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (size_t i = 0; i < n; ++i) p[i] /= z;
  return p;
}

// Indices sorted by probability descending, ties broken by lower index first.
inline std::vector<size_t> prob_order(const std::vector<double>& p) {
  std::vector<size_t> order(p.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&p](size_t a, size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  return order;
}

// The minimal top-p set: smallest prefix of the sorted order whose
// cumulative mass reaches top_p.
inline std::vector<size_t> nucleus_set(const double* logits, size_t n,
                                       double top_p, double temperature) {
  std::vector<double> p = softmax_probs(logits, n, temperature);
  std::vector<size_t> order = prob_order(p);
  double cum = 0.0;
  std::vector<size_t> keep;
  for (size_t i : order) {
    keep.push_back(i);
    cum += p[i];
    if (cum >= top_p) break;
  }
  return keep;
}

// Temperature-scale, softmax, keep the minimal top-p prefix, renormalize,
// sample. Returns the sampled index in [0, n).
inline size_t nucleus_sample(const double* logits, size_t n,
                             const GenerationParams& params, Rng& rng) {
  if (n == 0) throw data_error("nucleus_sample: empty distribution");
  std::vector<double> p = softmax_probs(logits, n, params.temperature);
  std::vector<size_t> order = prob_order(p);
  double cum = 0.0;
  size_t keep = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    cum += p[order[i]];
    keep = i + 1;
    if (cum >= params.top_p) break;
  }
  double u = rng.uniform() * cum;
  double acc = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    acc += p[order[i]];
    if (u < acc) return order[i];
  }
  return order[keep - 1];  // numeric slack: fall back to the last kept id
}

template <typename T>
size_t nucleus_sample_t(const T* logits, size_t n, const GenerationParams& params,
                        Rng& rng) {
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = static_cast<double>(logits[i]);
  return nucleus_sample(d.data(), n, params, rng);
}

}  // namespace mave
