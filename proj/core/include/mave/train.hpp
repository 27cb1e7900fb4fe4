#pragma once

// Training: example construction (span masking + rearrangement + delay +
// next-frame targets), the weighted multi-level NLL, Adam with warmup and
// inverse-sqrt decay, and the deterministic training loop.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mave/codec.hpp"
#include "mave/model.hpp"
#include "mave/rng.hpp"
#include "mave/tensor.hpp"

namespace mave {

// ---------------------------------------------------------------------------
// Loss weights
// ---------------------------------------------------------------------------

struct LossWeights {
  std::vector<double> alpha;

  // 0.25 on the first three levels, 0.05 on the rest (sums to 1.0 at K=8).
  static LossWeights defaults(int levels) {
    LossWeights w;
    for (int k = 0; k < levels; ++k) w.alpha.push_back(k < 3 ? 0.25 : 0.05);
    return w;
  }
  void validate(int levels) const {
    if (static_cast<int>(alpha.size()) != levels)
      throw data_error("loss weights: need one weight per level");
    for (size_t i = 0; i < alpha.size(); ++i) {
      if (!(alpha[i] > 0.0)) throw data_error("loss weights: weights must be > 0");
      if (i > 0 && alpha[i] > alpha[i - 1])
        throw data_error("loss weights: weights must be non-increasing");
    }
  }
};

// ---------------------------------------------------------------------------
// Training examples
// ---------------------------------------------------------------------------

struct TrainExample {
  std::vector<uint16_t> input;   // rows x K delayed frames (extended vocab)
  std::vector<int32_t> targets;  // rows x K: input shifted by one frame
  std::vector<uint8_t> valid;    // rows x K: participates in the loss
  std::vector<uint8_t> in_span;  // rows x K: target is trailing span content
  int64_t rows = 0;
  int levels = 0;
  std::vector<int32_t> phonemes;
};

// sample spans -> rearrange -> delay -> shift. valid is false exactly where
// the target is a mask placeholder/trigger, BOS, or PAD (end-of-span stays
// in the loss so the model learns to stop).
inline TrainExample make_training_example(const CodecGrid& grid,
                                          const std::vector<int32_t>& phonemes,
                                          Rng& rng) {
  SpanMask spans = sample_spans(grid.length, rng);
  RearrangedSequence seq = rearrange(grid, spans);
  DelayedGrid delayed = apply_delay(seq);
  SpecialVocab vocab{grid.codebook_size};
  int K = grid.levels;

  // Per rearranged row: is it trailing span content?
  std::vector<uint8_t> content(static_cast<size_t>(seq.num_frames()), 0);
  {
    int64_t t = seq.num_frames();
    // Walk the trailing blocks backwards: ... [trigger][content...][eos] x spans.
    for (auto it = seq.spans.rbegin(); it != seq.spans.rend(); ++it) {
      t -= 1;  // end-of-span row
      t -= it->length;
      for (int64_t i = 0; i < it->length; ++i) content[static_cast<size_t>(t + i)] = 1;
      t -= 1;  // trigger row
    }
  }

  TrainExample ex;
  ex.rows = delayed.num_frames();
  ex.levels = K;
  ex.input = delayed.frames;
  ex.targets.assign(static_cast<size_t>(ex.rows) * K, vocab.pad());
  ex.valid.assign(static_cast<size_t>(ex.rows) * K, 0);
  ex.in_span.assign(static_cast<size_t>(ex.rows) * K, 0);
  ex.phonemes = phonemes;
  for (int64_t t = 0; t + 1 < ex.rows; ++t) {
    for (int k = 0; k < K; ++k) {
      int32_t tgt = delayed.at(t + 1, k);
      ex.targets[static_cast<size_t>(t) * K + k] = tgt;
      bool special_skip = tgt == vocab.bos() || tgt == vocab.pad() ||
                          vocab.mask_index(tgt) > 0;
      ex.valid[static_cast<size_t>(t) * K + k] = special_skip ? 0 : 1;
      int64_t src = (t + 1) - k;  // rearranged row feeding the target cell
      if (src >= 0 && src < seq.num_frames() && content[static_cast<size_t>(src)])
        ex.in_span[static_cast<size_t>(t) * K + k] = 1;
    }
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Weighted NLL
// ---------------------------------------------------------------------------

template <typename T>
struct LossBreakdown {
  Tensor<T> loss;                    // scalar
  std::vector<double> level_mean;    // per-level mean NLL
  std::vector<int64_t> level_count;  // valid positions per level
};

// Per level: mean NLL over valid positions; then alpha-weighted sum.
template <typename T>
LossBreakdown<T> weighted_nll(Context<T>& ctx, const std::vector<Tensor<T>>& logits,
                              const TrainExample& ex, const LossWeights& w) {
  int K = ex.levels;
  w.validate(K);
  if (static_cast<int>(logits.size()) != K)
    throw data_error("weighted_nll: need one logits tensor per level");
  int64_t rows = ex.rows;
  LossBreakdown<T> out;
  int64_t total_valid = 0;
  Tensor<T> acc;
  for (int k = 0; k < K; ++k) {
    if (logits[static_cast<size_t>(k)].dim(0) != rows)
      throw data_error("weighted_nll: logits rows mismatch");
    std::vector<int32_t> tg(static_cast<size_t>(rows));
    std::vector<uint8_t> va(static_cast<size_t>(rows));
    int64_t count = 0;
    for (int64_t t = 0; t < rows; ++t) {
      tg[static_cast<size_t>(t)] = ex.targets[static_cast<size_t>(t) * K + k];
      va[static_cast<size_t>(t)] = ex.valid[static_cast<size_t>(t) * K + k];
      count += va[static_cast<size_t>(t)];
    }
    out.level_count.push_back(count);
    if (count == 0) {
      out.level_mean.push_back(0.0);
      continue;
    }
    total_valid += count;
    Tensor<T> sum = masked_nll(ctx, logits[static_cast<size_t>(k)], tg, va);
    Tensor<T> mean = scale(ctx, sum, T(1) / static_cast<T>(count));
    out.level_mean.push_back(static_cast<double>(mean.at(0)));
    Tensor<T> term = scale(ctx, mean, static_cast<T>(w.alpha[static_cast<size_t>(k)]));
    acc = acc.defined() ? add(ctx, acc, term) : term;
  }
  if (total_valid == 0)
    throw data_error("weighted_nll: degenerate batch, no valid positions");
  out.loss = acc;
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct TrainerConfig {
  double lr = 3e-3;
  double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-9;
  int warmup_steps = 100;
  int steps = 1500;
  int batch_size = 8;
  int grad_accum = 1;  // micro-batches per step; effective batch = batch_size * grad_accum
  double grad_clip = 1.0;
  uint64_t seed = 1;
  int log_every = 10;
  int ckpt_every = 0;            // 0 = final only
  double target_train_acc = 0.0; // early stop threshold on masked accuracy (0 = off)
  int eval_every = 0;            // probe cadence for early stopping

  void validate() const {
    if (!(lr > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) ||
        !(adam_eps > 0) || warmup_steps < 1 || steps < 1 || batch_size < 1 ||
        grad_accum < 1 || log_every < 1)
      throw data_error("trainer config: invalid field");
  }
  double lr_at(int step) const {
    double s = static_cast<double>(step + 1);
    double w = static_cast<double>(warmup_steps);
    return lr * std::min(s / w, std::sqrt(w / s));
  }
};

// Standard Adam over a flat list of parameter tensors.
template <typename T>
class Adam {
 public:
  Adam(const TrainerConfig& tc, const std::vector<Tensor<T>*>& params)
      : tc_(tc), params_(params) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params[i]->numel()), T(0));
      v_[i].assign(static_cast<size_t>(params[i]->numel()), T(0));
    }
  }

  void step(const std::vector<std::vector<T>>& grads, double lr, double clip_scale) {
    ++t_;
    double b1 = tc_.beta1, b2 = tc_.beta2;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      T* p = params_[i]->mut();
      const T* g = grads[i].data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      int64_t n = params_[i]->numel();
      for (int64_t j = 0; j < n; ++j) {
        double gj = static_cast<double>(g[j]) * clip_scale;
        double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
        double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + tc_.adam_eps);
        p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
      }
    }
  }

 private:
  TrainerConfig tc_;
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Corpus loading and evaluation helpers
// ---------------------------------------------------------------------------

struct LoadedExample {
  CodecGrid grid;
  std::vector<int32_t> phonemes;
  std::string transcript;
};

inline std::vector<LoadedExample> load_corpus(const std::vector<ManifestEntry>& entries,
                                              const PhonemeTable& table) {
  std::vector<LoadedExample> out;
  for (const auto& e : entries) {
    LoadedExample le;
    le.grid = load_tokens(e.grid_path).to_codec_grid();
    le.phonemes = phonemize(e.transcript, table);
    le.transcript = e.transcript;
    out.push_back(std::move(le));
  }
  return out;
}

// One full forward pass for an example; logits per level.
template <typename T>
DecoderOutput<T> model_forward(Context<T>& ctx, Model<T>& model,
                               const TrainExample& ex) {
  if (model.has_encoder()) {
    Tensor<T> z = encode_text(ctx, model.enc_cfg, model.enc, ex.phonemes);
    return decoder_forward(ctx, model.dec_cfg, model.dec, ex.input.data(), ex.rows,
                           &z, nullptr);
  }
  return decoder_forward<T>(ctx, model.dec_cfg, model.dec, ex.input.data(), ex.rows,
                            nullptr, &ex.phonemes);
}

// Teacher-forced argmax accuracy over trailing-span-content positions (and
// over all valid positions), with deterministic span draws per example.
template <typename T>
struct AccuracyReport {
  int64_t span_correct = 0, span_total = 0;
  int64_t valid_correct = 0, valid_total = 0;
  double span_acc() const {
    return span_total ? static_cast<double>(span_correct) / static_cast<double>(span_total) : 0.0;
  }
  double valid_acc() const {
    return valid_total ? static_cast<double>(valid_correct) / static_cast<double>(valid_total) : 0.0;
  }
};

template <typename T>
AccuracyReport<T> masked_accuracy(Model<T>& model,
                                  const std::vector<LoadedExample>& corpus,
                                  uint64_t eval_seed) {
  AccuracyReport<T> rep;
  Context<T> ctx{nullptr, nullptr};
  for (size_t i = 0; i < corpus.size(); ++i) {
    Rng rng(derive_seed(eval_seed, 0xACC, i));
    TrainExample ex = make_training_example(corpus[i].grid, corpus[i].phonemes, rng);
    DecoderOutput<T> out = model_forward(ctx, model, ex);
    int K = ex.levels;
    for (int64_t t = 0; t < ex.rows; ++t)
      for (int k = 0; k < K; ++k) {
        size_t idx = static_cast<size_t>(t) * K + k;
        if (!ex.valid[idx]) continue;
        bool hit = argmax_row(out.logits[static_cast<size_t>(k)], t) == ex.targets[idx];
        rep.valid_total++;
        rep.valid_correct += hit;
        if (ex.in_span[idx]) {
          rep.span_total++;
          rep.span_correct += hit;
        }
      }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainStats {
  int steps_run = 0;
  double final_loss = 0.0;
  double final_span_acc = 0.0;
  std::string stop_reason;
};

// Deterministic given the trainer seed: example picks, span draws and
// gradient summation order are all fixed. Metrics lines are written with
// fixed formatting; the header records the optimizer choice.
template <typename T>
TrainStats train_loop(Model<T>& model, const std::vector<LoadedExample>& corpus,
                      const TrainerConfig& tc, const LossWeights& alpha,
                      std::ostream& metrics, const std::string& ckpt_path) {
  tc.validate();
  if (corpus.empty()) throw data_error("train: empty corpus");
  alpha.validate(model.dec_cfg.levels);

  std::vector<Tensor<T>*> params;
  std::vector<std::string> names;
  visit_model_params(model, [&](const std::string& n, Tensor<T>& t) {
    names.push_back(n);
    params.push_back(&t);
  });
  Adam<T> opt(tc, params);

  metrics << "# optimizer=adam(lr=" << tc.lr << ",beta1=" << tc.beta1
          << ",beta2=" << tc.beta2 << ",eps=" << tc.adam_eps
          << ") schedule=linear-warmup+inverse-sqrt warmup=" << tc.warmup_steps
          << " note=reference-setup-uses-a-scaled-adaptive-optimizer\n";

  TrainStats stats;
  int micro = tc.batch_size * tc.grad_accum;
  std::vector<std::vector<T>> grads(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    grads[i].assign(static_cast<size_t>(params[i]->numel()), T(0));

  for (int step = 0; step < tc.steps; ++step) {
    for (auto& g : grads) std::fill(g.begin(), g.end(), T(0));
    double loss_sum = 0.0;
    std::vector<double> level_sum(static_cast<size_t>(model.dec_cfg.levels), 0.0);

    for (int b = 0; b < micro; ++b) {
      Rng ex_rng(derive_seed(tc.seed, 0xE1, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(b)));
      size_t idx = static_cast<size_t>(ex_rng.below(corpus.size()));
      TrainExample ex = make_training_example(corpus[idx].grid,
                                              corpus[idx].phonemes, ex_rng);
      Tape<T> tape;
      for (auto* p : params) tape.watch(*p);
      Context<T> ctx{&tape, nullptr};
      DecoderOutput<T> out = model_forward(ctx, model, ex);
      LossBreakdown<T> lb = weighted_nll(ctx, out.logits, ex, alpha);
      Tensor<T> scaled = scale(ctx, lb.loss, T(1) / static_cast<T>(micro));
      tape.backward(scaled);
      for (size_t i = 0; i < params.size(); ++i) {
        const auto& g = tape.grad(*params[i]);
        T* acc = grads[i].data();
        for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
      }
      loss_sum += static_cast<double>(lb.loss.at(0)) / micro;
      for (size_t k = 0; k < lb.level_mean.size(); ++k)
        level_sum[k] += lb.level_mean[k] / micro;
    }

    if (!std::isfinite(loss_sum)) {
      metrics << "abort step=" << step << " reason=non-finite-loss\n";
      throw numeric_error("train: non-finite loss at step " + std::to_string(step) +
                          " (last checkpoint retained)");
    }

    double gnorm = 0.0;
    for (const auto& g : grads)
      for (T x : g) gnorm += static_cast<double>(x) * static_cast<double>(x);
    gnorm = std::sqrt(gnorm);
    double clip_scale =
        (tc.grad_clip > 0.0 && gnorm > tc.grad_clip) ? tc.grad_clip / gnorm : 1.0;
    double lr = tc.lr_at(step);
    opt.step(grads, lr, clip_scale);

    stats.steps_run = step + 1;
    stats.final_loss = loss_sum;
    if ((step + 1) % tc.log_every == 0 || step == 0 || step + 1 == tc.steps) {
      std::ostringstream line;
      line << "step=" << (step + 1) << std::setprecision(6) << std::fixed
           << " loss=" << loss_sum;
      for (size_t k = 0; k < level_sum.size(); ++k)
        line << " l" << (k + 1) << "=" << level_sum[k];
      line << " lr=" << std::setprecision(8) << lr << std::setprecision(6)
           << " gnorm=" << gnorm;
      metrics << line.str() << "\n" << std::flush;
    }
    if (tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0 && !ckpt_path.empty())
      save_model(ckpt_path, model);

    if (tc.target_train_acc > 0.0 && tc.eval_every > 0 &&
        (step + 1) % tc.eval_every == 0) {
      AccuracyReport<T> rep = masked_accuracy(model, corpus, tc.seed);
      metrics << "eval step=" << (step + 1) << std::setprecision(6) << std::fixed
              << " span_acc=" << rep.span_acc() << " valid_acc=" << rep.valid_acc()
              << "\n" << std::flush;
      stats.final_span_acc = rep.span_acc();
      if (rep.span_acc() >= tc.target_train_acc) {
        stats.stop_reason = "target-accuracy";
        metrics << "early_stop step=" << (step + 1) << "\n";
        break;
      }
    }
  }
  if (stats.stop_reason.empty()) stats.stop_reason = "steps-exhausted";
  if (!ckpt_path.empty()) save_model(ckpt_path, model);
  return stats;
}

}  // namespace mave
