#include "mave/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mave/codec.hpp"
#include "mave/model.hpp"

namespace mave {

void CostModel::validate() const {
  if (lx < 1 || ly < 1 || nd < 1 || h0 < 1 || ne < 1 || md < 1 || h < 1)
    throw data_error("cost model: all dimensions must be >= 1");
}

int64_t predict_decoder_only(const CostModel& m) {
  if (m.ly == 0) return 0;
  m.validate();
  return m.nd * m.h0 * (m.ly * m.lx + (m.ly * m.ly) / 2);
}

int64_t predict_encoder(const CostModel& m) {
  m.validate();
  return m.ne * m.h * m.lx * m.lx;
}

int64_t predict_mamba_decoder(const CostModel& m) {
  if (m.ly == 0) return 0;
  m.validate();
  return m.md * m.h * m.ly * (m.lx + 1);
}

int64_t predict_ffn_per_token(const CostModel& m) {
  m.validate();
  return m.nd * m.h0;
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw data_error("linear fit: need at least 2 matched points");
  size_t n = x.size();
  double xm = 0.0, ym = 0.0;
  for (size_t i = 0; i < n; ++i) {
    xm += x[i];
    ym += y[i];
  }
  xm /= static_cast<double>(n);
  ym /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = x[i] - xm, dy = y[i] - ym;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  LinearFit f;
  if (sxx == 0.0) {
    // No spread in x: the best fit is the constant ym.
    f.slope = 0.0;
    f.intercept = ym;
    f.r2 = syy == 0.0 ? 1.0 : 0.0;
    return f;
  }
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  if (syy == 0.0) {
    f.r2 = 1.0;  // y is exactly constant; a zero-slope line is a perfect fit
  } else {
    double ssres = syy - sxy * sxy / sxx;
    f.r2 = 1.0 - ssres / syy;
  }
  return f;
}

double loglog_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx(x.size()), ly(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0)
      throw data_error("log-log exponent: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return linear_fit(lx, ly).slope;
}

namespace {

struct PointCounts {
  int64_t interaction = 0;
  int64_t overhead = 0;
  int64_t encoder_attention = 0;
  std::vector<int64_t> per_step;
  std::vector<int64_t> state_bytes;
  int64_t text_cache = 0;
};

PointCounts measure_point(const DecoderConfig& dcfg, const EncoderConfig& ecfg,
                          int64_t lx, int64_t ly, uint64_t seed) {
  Model<float> model = init_model<float>(dcfg, ecfg, seed);
  SpecialVocab vocab{dcfg.codebook_size};
  int K = dcfg.levels;

  std::vector<int32_t> phonemes(static_cast<size_t>(lx));
  for (int64_t i = 0; i < lx; ++i)
    phonemes[static_cast<size_t>(i)] = static_cast<int32_t>(i % 26) + 1;

  MacCounter macs;
  Context<float> ctx{nullptr, &macs};
  PointCounts pc;

  Tensor<float> z;
  if (dcfg.uses_cross_attention()) {
    z = encode_text(ctx, model.enc_cfg, model.enc, phonemes);
    pc.encoder_attention = static_cast<int64_t>(macs.attention);
  }

  // Prefill a one-frame prompt, then take ly forced generation steps. Only
  // the steps are counted: reset after the prefill.
  std::vector<uint16_t> prompt(static_cast<size_t>(K),
                               static_cast<uint16_t>(vocab.bos()));
  DecoderState<float> state;
  decoder_forward(ctx, dcfg, model.dec,  prompt.data(), 1,
                  dcfg.uses_cross_attention() ? &z : nullptr,
                  dcfg.uses_cross_attention() ? nullptr : &phonemes, &state);
  macs.reset();

  pc.per_step.reserve(static_cast<size_t>(ly));
  pc.state_bytes.reserve(static_cast<size_t>(ly));
  uint64_t prev_ia = 0;
  std::vector<uint16_t> frame(static_cast<size_t>(K));
  for (int64_t t = 0; t < ly; ++t) {
    for (int k = 0; k < K; ++k)
      frame[static_cast<size_t>(k)] =
          static_cast<uint16_t>((t * 7 + k * 3) % dcfg.codebook_size);
    decoder_step(ctx, dcfg, model.dec, state, frame.data());
    uint64_t ia = macs.attention + macs.scan;
    pc.per_step.push_back(static_cast<int64_t>(ia - prev_ia));
    prev_ia = ia;
    pc.state_bytes.push_back(static_cast<int64_t>(state.state_bytes()));
  }
  pc.interaction = static_cast<int64_t>(macs.attention + macs.scan);
  pc.overhead = static_cast<int64_t>(macs.matmul + macs.conv);
  pc.text_cache = static_cast<int64_t>(state.text_cache_bytes());
  return pc;
}

}  // namespace

BenchReport measure_generation(const DecoderConfig& dec_cfg,
                               const EncoderConfig& enc_cfg,
                               const std::vector<Variant>& variants,
                               const std::vector<int64_t>& lxs,
                               const std::vector<int64_t>& lys, int repetitions,
                               uint64_t seed) {
  dec_cfg.validate();
  if (variants.empty()) throw data_error("bench: no variants given");
  if (lxs.empty()) throw data_error("bench: no text lengths given");
  if (lys.size() < 4)
    throw data_error("bench: need at least 4 generated-length points for a fit");
  if (repetitions < 1) throw data_error("bench: repetitions must be >= 1");
  std::vector<int64_t> ly_sorted = lys;
  std::sort(ly_sorted.begin(), ly_sorted.end());
  for (int64_t v : ly_sorted)
    if (v < 1) throw data_error("bench: generated lengths must be >= 1");

  BenchReport report;
  for (Variant var : variants) {
    DecoderConfig dcfg = dec_cfg;
    dcfg.variant = var;
    dcfg.validate();
    for (int64_t lx : lxs) {
      if (lx < 1) throw data_error("bench: text lengths must be >= 1");
      BenchSeries series;
      series.variant = var;
      series.lx = lx;
      int64_t ly_max = ly_sorted.back();
      for (int64_t ly : ly_sorted) {
        PointCounts pc = measure_point(dcfg, enc_cfg, lx, ly, seed);
        for (int rep = 1; rep < repetitions; ++rep) {
          PointCounts again = measure_point(dcfg, enc_cfg, lx, ly, seed);
          if (again.interaction != pc.interaction || again.overhead != pc.overhead)
            throw data_error("bench: op counts changed across repetitions");
        }
        CostModel cm{lx, ly, dcfg.num_layers, dcfg.model_dim, enc_cfg.num_layers,
                     dcfg.num_layers, dcfg.model_dim};
        BenchPoint bp;
        bp.lx = lx;
        bp.ly = ly;
        bp.predicted = dcfg.is_mamba() ? predict_mamba_decoder(cm)
                                       : predict_decoder_only(cm);
        bp.measured_interaction = pc.interaction;
        bp.measured_overhead = pc.overhead;
        bp.encoder_predicted =
            dcfg.uses_cross_attention() ? predict_encoder(cm) : 0;
        bp.encoder_measured = pc.encoder_attention;
        bp.state_bytes_first = pc.state_bytes.front();
        bp.state_bytes_last = pc.state_bytes.back();
        bp.text_cache_bytes = pc.text_cache;
        series.points.push_back(bp);
        if (ly == ly_max) {
          series.per_token_interaction = pc.per_step;
          series.state_bytes_per_step = pc.state_bytes;
        }
      }
      for (size_t i = 1; i < series.points.size(); ++i)
        if (series.points[i].measured_interaction <=
            series.points[i - 1].measured_interaction)
          throw data_error("bench: measured ops not monotone in generated length");

      std::vector<double> xs, ys, lyv, ts, ps;
      for (const BenchPoint& bp : series.points) {
        xs.push_back(static_cast<double>(bp.predicted));
        ys.push_back(static_cast<double>(bp.measured_interaction));
        lyv.push_back(static_cast<double>(bp.ly));
      }
      for (size_t t = 0; t < series.per_token_interaction.size(); ++t) {
        ts.push_back(static_cast<double>(t));
        ps.push_back(static_cast<double>(series.per_token_interaction[t]));
      }
      series.total_fit = linear_fit(xs, ys);
      series.per_token_fit = linear_fit(ts, ps);
      series.exponent = loglog_exponent(lyv, ys);
      report.series.push_back(std::move(series));
    }
  }
  return report;
}

std::string format_report(const BenchReport& report) {
  std::ostringstream os;
  os << "generation cost: measured multiply-accumulates vs predicted\n";
  os << "(interaction = attention + scan MACs; overhead = projection/ffn/conv "
        "MACs, reported separately)\n\n";
  for (const BenchSeries& s : report.series) {
    os << "variant=" << variant_name(s.variant) << " lx=" << s.lx << "\n";
    os << "      ly      predicted       measured       overhead  state_first"
          "   state_last   text_cache\n";
    for (const BenchPoint& p : s.points) {
      os << "  " << std::setw(6) << p.ly << " " << std::setw(14) << p.predicted
         << " " << std::setw(14) << p.measured_interaction << " "
         << std::setw(14) << p.measured_overhead << " " << std::setw(12)
         << p.state_bytes_first << " " << std::setw(12) << p.state_bytes_last
         << " " << std::setw(12) << p.text_cache_bytes << "\n";
    }
    os << "  fit: measured = " << s.total_fit.slope << " * predicted + "
       << s.total_fit.intercept << "  r2=" << s.total_fit.r2 << "\n";
    os << "  per-token: slope=" << s.per_token_fit.slope
       << " intercept=" << s.per_token_fit.intercept
       << " r2=" << s.per_token_fit.r2 << "\n";
    os << "  scaling exponent (log-log vs ly): " << s.exponent << "\n\n";
  }
  os << "# machine-readable records\n";
  for (const BenchSeries& s : report.series) {
    for (const BenchPoint& p : s.points)
      os << "record\t" << variant_name(s.variant) << "\t" << p.lx << "\t"
         << p.ly << "\t" << p.predicted << "\t" << p.measured_interaction
         << "\t" << p.measured_overhead << "\t" << p.state_bytes_first << "\t"
         << p.state_bytes_last << "\t" << p.text_cache_bytes << "\n";
    os << "series\t" << variant_name(s.variant) << "\t" << s.lx << "\t"
       << s.total_fit.slope << "\t" << s.total_fit.intercept << "\t"
       << s.total_fit.r2 << "\t" << s.per_token_fit.slope << "\t"
       << s.per_token_fit.intercept << "\t" << s.per_token_fit.r2 << "\t"
       << s.exponent << "\n";
  }
  os << "# plot data (x = ly, y = measured interaction MACs)\n";
  for (const BenchSeries& s : report.series) {
    os << "plot\t" << variant_name(s.variant) << "\tlx=" << s.lx << "\tx";
    for (const BenchPoint& p : s.points) os << "\t" << p.ly;
    os << "\n";
    os << "plot\t" << variant_name(s.variant) << "\tlx=" << s.lx << "\ty";
    for (const BenchPoint& p : s.points) os << "\t" << p.measured_interaction;
    os << "\n";
  }
  return os.str();
}

}  // namespace mave
