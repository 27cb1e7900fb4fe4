#pragma once

// Symbolic generation-cost model and the measurement harness that validates
// it against instrumented multiply-accumulate counts and explicit state/cache
// byte accounting of the real decoder variants.
//
// The model counts only the interaction terms that drive asymptotics —
// attention score/value products and scan state updates. Per-token costs that
// are independent of position (projections, feed-forward, depthwise conv) are
// measured and reported in a separate overhead column, and the feed-forward
// term is also predicted separately.

#include <cstdint>
#include <string>
#include <vector>

#include "mave/decoder.hpp"
#include "mave/errors.hpp"
#include "mave/text.hpp"

namespace mave {

struct CostModel {
  int64_t lx = 0;  // text length (encoder positions)
  int64_t ly = 0;  // generated frames
  int64_t nd = 0;  // decoder-only transformer layers
  int64_t h0 = 0;  // decoder-only hidden size
  int64_t ne = 0;  // encoder layers
  int64_t md = 0;  // state-space decoder layers
  int64_t h = 0;   // encoder / state-space hidden size

  void validate() const;
};

// Decoder-only transformer over the concatenated text+audio stream:
// nd * h0 * (ly*lx + ly^2/2). Exact integers; ly is expected even so the
// half-square term stays integral.
int64_t predict_decoder_only(const CostModel& m);

// Text encoder self-attention: ne * h * lx^2.
int64_t predict_encoder(const CostModel& m);

// State-space decoder with per-layer cross-attention: md * h * ly * (lx + 1)
// — lx for the cross-attention reads, +1 for the recurrent state update.
int64_t predict_mamba_decoder(const CostModel& m);

// Position-independent feed-forward cost per generated token, nd * h0,
// reported as a separate additive column (ffn_per_token * ly).
int64_t predict_ffn_per_token(const CostModel& m);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
};

// Least-squares y = slope*x + intercept. Degenerate spreads (all x equal, or
// all y equal) report r2 = 1.0 so exact-constant series pass shape checks.
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// Slope of log(y) vs log(x): the empirical scaling exponent.
double loglog_exponent(const std::vector<double>& x, const std::vector<double>& y);

// One measured (lx, ly) grid point.
struct BenchPoint {
  int64_t lx = 0;
  int64_t ly = 0;
  int64_t predicted = 0;            // variant-matched interaction prediction
  int64_t measured_interaction = 0; // attention + scan MACs over the ly steps
  int64_t measured_overhead = 0;    // projection/ffn/conv MACs over the steps
  int64_t encoder_predicted = 0;
  int64_t encoder_measured = 0;     // attention MACs of one encoder pass
  int64_t state_bytes_first = 0;    // decoder state after the first step
  int64_t state_bytes_last = 0;     // decoder state after the last step
  int64_t text_cache_bytes = 0;     // cross-attention K/V cache (0 for concat)
};

// All ly points at one (variant, lx), plus fits and per-step series taken at
// the largest ly.
struct BenchSeries {
  Variant variant = Variant::mamba_xattn;
  int64_t lx = 0;
  std::vector<BenchPoint> points;
  std::vector<int64_t> per_token_interaction;  // MACs of step t (largest ly)
  std::vector<int64_t> state_bytes_per_step;   // state bytes after step t
  LinearFit total_fit;      // measured_interaction vs predicted
  LinearFit per_token_fit;  // per-step MACs vs t
  double exponent = 0.0;    // log-log slope of measured_interaction vs ly
};

struct BenchReport {
  std::vector<BenchSeries> series;
};

// Run the generation loop (prefill of a one-frame prompt, then ly forced
// steps) for each (lx, ly) point, counting MACs via the numerics hook and
// state/cache bytes via the decoder-state accounting. Counts are exact, so
// repetitions only cross-check determinism (every rep must count the same).
// Requires >= 4 ly points per series for the fits.
BenchReport measure_generation(const DecoderConfig& dec_cfg,
                               const EncoderConfig& enc_cfg,
                               const std::vector<Variant>& variants,
                               const std::vector<int64_t>& lxs,
                               const std::vector<int64_t>& lys, int repetitions,
                               uint64_t seed);

// Human-readable table followed by machine-readable records
// ("record\t<variant>\t<lx>\t<ly>\t..." and "series\t..." lines) and x/y
// plot-data blocks.
std::string format_report(const BenchReport& report);

}  // namespace mave
