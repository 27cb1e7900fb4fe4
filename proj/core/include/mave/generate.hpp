#pragma once

// Autoregressive generation. The driver works in rearranged-stream space:
// it keeps the list of decided source rows and materializes each delayed
// input row cell-by-cell from rows decided earlier, so the per-level delay is
// honored without ever padding-and-repairing a delayed grid.
//
// Per delayed step t', cell (t', k) comes from source row t'-k. Level 0 of a
// fresh source row is sampled first and decides control flow: a span keeps
// producing content rows until level 0 samples the end-of-span id (or the
// span budget forces one); triggers between spans and flush rows after the
// last span are forced, not sampled.

#include <cstdint>
#include <string>
#include <vector>

#include "mave/codec.hpp"
#include "mave/model.hpp"
#include "mave/sampler.hpp"
#include "mave/text.hpp"

namespace mave {

struct GenerateReport {
  int64_t frames_generated = 0;          // content rows across all spans
  bool truncated = false;                // some span hit the budget
  std::vector<int64_t> span_lengths;     // content rows per span
};

template <typename T>
struct EditResult {
  CodecGrid grid;
  GenerateReport report;
};

namespace gen_detail {

// A decided source row: either forced (control rows: triggers, end-of-span,
// flush padding) or sampled content.
struct SourceRow {
  bool forced = false;
  std::vector<int32_t> vals;  // per level; -1 = not yet decided
};

template <typename T>
int32_t sample_level(const Tensor<T>& logits, int level_zero, int codebook_size,
                     int eos_id, const GenerationParams& gp, Rng& rng) {
  // Restrict to structurally valid ids: real tokens, plus end-of-span at
  // level 0 only. Nucleus sampling runs on the restricted support.
  int64_t n = codebook_size + (level_zero ? 1 : 0);
  std::vector<double> sub(static_cast<size_t>(n));
  const T* row = logits.ptr();
  for (int64_t i = 0; i < codebook_size; ++i) sub[static_cast<size_t>(i)] = static_cast<double>(row[i]);
  if (level_zero) sub[static_cast<size_t>(codebook_size)] = static_cast<double>(row[eos_id]);
  size_t pick = nucleus_sample(sub.data(), sub.size(), gp, rng);
  return pick == static_cast<size_t>(codebook_size) ? eos_id
                                                    : static_cast<int32_t>(pick);
}

// Core loop shared by editing and continuation. The prompt's last row must be
// the first row whose successor is to be generated (a trigger row for edits,
// the last reference row for continuation). triggers[j] supplies the forced
// row that opens span j+1 (empty for single-span runs).
template <typename T>
struct RunResult {
  std::vector<std::vector<int32_t>> span_rows;  // content rows per span
  GenerateReport report;
};

template <typename T>
RunResult<T> run_spans(Model<T>& model, const Tensor<T>* z,
                       const std::vector<int32_t>* phonemes,
                       const std::vector<uint16_t>& prompt_frames, int64_t prompt_rows,
                       const std::vector<std::vector<int32_t>>& triggers,
                       int num_spans, const GenerationParams& gp, Rng& rng) {
  gp.validate();
  const DecoderConfig& cfg = model.dec_cfg;
  int K = cfg.levels;
  int S = cfg.codebook_size;
  SpecialVocab vocab{S};
  Context<T> ctx{nullptr, nullptr};

  // Decided rows; indices continue the prompt numbering.
  std::vector<SourceRow> rows(static_cast<size_t>(prompt_rows));
  for (int64_t t = 0; t < prompt_rows; ++t) {
    rows[static_cast<size_t>(t)].forced = true;
    rows[static_cast<size_t>(t)].vals.assign(static_cast<size_t>(K), 0);
    for (int k = 0; k < K; ++k)
      rows[static_cast<size_t>(t)].vals[static_cast<size_t>(k)] =
          prompt_frames[static_cast<size_t>(t) * K + k];
  }

  // Feed the prompt in delayed form: delayed row t' takes level k from source
  // row t'-k (PAD when negative). These only reference prompt rows.
  std::vector<uint16_t> delayed_prompt(static_cast<size_t>(prompt_rows) * K,
                                       static_cast<uint16_t>(vocab.pad()));
  for (int64_t tp = 0; tp < prompt_rows; ++tp)
    for (int k = 0; k < K; ++k) {
      int64_t src = tp - k;
      if (src >= 0)
        delayed_prompt[static_cast<size_t>(tp) * K + k] =
            static_cast<uint16_t>(rows[static_cast<size_t>(src)].vals[static_cast<size_t>(k)]);
    }
  DecoderState<T> state;
  DecoderOutput<T> out = decoder_forward(ctx, cfg, model.dec, delayed_prompt.data(),
                                         prompt_rows, z, phonemes, &state);
  RunResult<T> res;
  res.span_rows.resize(static_cast<size_t>(num_spans));
  res.report.span_lengths.assign(static_cast<size_t>(num_spans), 0);

  enum class Mode { InSpan, Trigger, Flush };
  Mode mode = num_spans > 0 ? Mode::InSpan : Mode::Flush;
  int span = 0;
  int64_t span_len = 0;
  int64_t flush_after = -1;  // last delayed row that must be decided

  // Extract logits row `r` of level k as a [1,V] view-free copy.
  auto logits_row = [&](const DecoderOutput<T>& o, int k, int64_t r) {
    Context<T> c2{nullptr, nullptr};
    return slice_rows(c2, o.logits[static_cast<size_t>(k)], r, r + 1);
  };
  int64_t out_rows = out.logits[0].dim(0);
  std::vector<Tensor<T>> cur(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) cur[static_cast<size_t>(k)] = logits_row(out, k, out_rows - 1);

  for (int64_t tp = prompt_rows;; ++tp) {
    // Decide every cell of delayed row tp. Level 0 may create a new source row.
    std::vector<uint16_t> frame(static_cast<size_t>(K),
                                static_cast<uint16_t>(vocab.pad()));
    for (int k = 0; k < K; ++k) {
      int64_t src = tp - k;
      if (src < 0) continue;
      if (src >= static_cast<int64_t>(rows.size())) {
        // Only level 0 can be the first to reference a new row.
        if (k != 0) throw data_error("generation: row decided out of order");
        SourceRow nr;
        if (mode == Mode::Trigger) {
          nr.forced = true;
          nr.vals = triggers[static_cast<size_t>(span)];
          mode = Mode::InSpan;
          ++span;
          span_len = 0;
        } else if (mode == Mode::Flush) {
          nr.forced = true;
          nr.vals.assign(static_cast<size_t>(K), vocab.pad());
        } else {
          int32_t pick = sample_level(cur[0], /*level_zero=*/1, S, vocab.eos_span(),
                                      gp, rng);
          bool budget = span_len >= gp.max_frames_per_span;
          if (budget && pick != vocab.eos_span()) {
            pick = vocab.eos_span();
            res.report.truncated = true;
          }
          if (pick == vocab.eos_span()) {
            nr.forced = true;
            nr.vals.assign(static_cast<size_t>(K), vocab.eos_span());
            if (span + 1 < num_spans) {
              mode = Mode::Trigger;
            } else {
              mode = Mode::Flush;
              // Last content row is src-1; its level K-1 sits in delayed row
              // (src-1) + (K-1). Decide through that row, then stop.
              flush_after = (src - 1) + (K - 1);
            }
          } else {
            nr.forced = false;
            nr.vals.assign(static_cast<size_t>(K), -1);
            nr.vals[0] = pick;
            ++span_len;
            res.report.span_lengths[static_cast<size_t>(span)] = span_len;
            res.span_rows[static_cast<size_t>(span)].push_back(static_cast<int32_t>(rows.size()));
            ++res.report.frames_generated;
          }
        }
        rows.push_back(std::move(nr));
      }
      SourceRow& sr = rows[static_cast<size_t>(src)];
      if (sr.vals[static_cast<size_t>(k)] < 0) {
        sr.vals[static_cast<size_t>(k)] =
            sample_level(cur[static_cast<size_t>(k)], /*level_zero=*/0, S,
                         vocab.eos_span(), gp, rng);
      }
      frame[static_cast<size_t>(k)] = static_cast<uint16_t>(sr.vals[static_cast<size_t>(k)]);
    }
    if (flush_after >= 0 && tp >= flush_after) break;
    DecoderOutput<T> step = decoder_step(ctx, cfg, model.dec, state, frame.data());
    for (int k = 0; k < K; ++k) cur[static_cast<size_t>(k)] = step.logits[static_cast<size_t>(k)];
  }

  // Replace row indices with the decided row values.
  for (auto& sr_list : res.span_rows) {
    std::vector<int32_t> flat;
    for (int32_t ri : sr_list)
      for (int k = 0; k < K; ++k)
        flat.push_back(rows[static_cast<size_t>(ri)].vals[static_cast<size_t>(k)]);
    sr_list = std::move(flat);
  }
  return res;
}

}  // namespace gen_detail

// Regenerate the masked spans of a grid so they are consistent with the
// (post-edit) transcript; unmasked regions pass through untouched. Exactly
// one generation pass; a span that exhausts its budget is force-closed and
// flagged in the report.
template <typename T>
EditResult<T> generate_edit(Model<T>& model, const CodecGrid& grid,
                            const SpanMask& spans, const std::string& transcript,
                            const GenerationParams& gp, const PhonemeTable& table) {
  grid.validate();
  if (spans.empty()) {
    EditResult<T> r;
    r.grid = grid;
    return r;
  }
  EditPrompt ep = build_edit_prompt(grid, spans);
  SpecialVocab vocab{grid.codebook_size};
  int K = grid.levels;

  std::vector<int32_t> phonemes = phonemize(transcript, table);
  Context<T> ctx{nullptr, nullptr};
  Tensor<T> z;
  if (model.has_encoder()) z = encode_text(ctx, model.enc_cfg, model.enc, phonemes);

  std::vector<std::vector<int32_t>> triggers;
  for (size_t j = 1; j < ep.plan.size(); ++j)
    triggers.push_back(std::vector<int32_t>(
        static_cast<size_t>(K), vocab.mask(ep.plan[j].mask_id)));

  Rng rng(gp.seed);
  auto run = gen_detail::run_spans(model, model.has_encoder() ? &z : nullptr,
                                   model.has_encoder() ? nullptr : &phonemes,
                                   ep.prompt_frames,
                                   static_cast<int64_t>(ep.prompt_frames.size()) / K,
                                   triggers, static_cast<int>(ep.plan.size()), gp, rng);

  // Assemble the full rearranged stream: prompt (ends with trigger 1), then
  // generated span content + end-of-span (+ next trigger) per span.
  RearrangedSequence seq;
  seq.levels = K;
  seq.codebook_size = grid.codebook_size;
  seq.source_length = grid.length;
  seq.frames.assign(ep.prompt_frames.begin(), ep.prompt_frames.end());
  for (size_t j = 0; j < run.span_rows.size(); ++j) {
    for (int32_t v : run.span_rows[j]) seq.frames.push_back(static_cast<uint16_t>(v));
    for (int k = 0; k < K; ++k)
      seq.frames.push_back(static_cast<uint16_t>(vocab.eos_span()));
    if (j + 1 < run.span_rows.size())
      for (int k = 0; k < K; ++k)
        seq.frames.push_back(static_cast<uint16_t>(vocab.mask(ep.plan[j + 1].mask_id)));
  }
  EditResult<T> res;
  res.grid = restore(seq);
  res.report = run.report;
  return res;
}

// Zero-shot continuation: prompt with BOS + the reference grid, condition the
// text path on reference + target transcripts, generate until end-of-span or
// budget. Output is the generated continuation only.
template <typename T>
EditResult<T> generate_tts(Model<T>& model, const CodecGrid& reference,
                           const std::string& reference_text,
                           const std::string& target_text,
                           const GenerationParams& gp, const PhonemeTable& table) {
  reference.validate();
  SpecialVocab vocab{reference.codebook_size};
  int K = reference.levels;
  std::string combined = normalize_text(target_text).empty()
                             ? reference_text
                             : reference_text + " " + target_text;
  std::vector<int32_t> phonemes = phonemize(combined, table);
  Context<T> ctx{nullptr, nullptr};
  Tensor<T> z;
  if (model.has_encoder()) z = encode_text(ctx, model.enc_cfg, model.enc, phonemes);

  std::vector<uint16_t> prompt;
  for (int k = 0; k < K; ++k) prompt.push_back(static_cast<uint16_t>(vocab.bos()));
  prompt.insert(prompt.end(), reference.tokens.begin(), reference.tokens.end());

  Rng rng(gp.seed);
  auto run = gen_detail::run_spans(model, model.has_encoder() ? &z : nullptr,
                                   model.has_encoder() ? nullptr : &phonemes, prompt,
                                   reference.length + 1, {}, 1, gp, rng);

  EditResult<T> res;
  res.report = run.report;
  const auto& flat = run.span_rows[0];
  int64_t rows = static_cast<int64_t>(flat.size()) / K;
  if (rows == 0) {
    // The model closed the span immediately; return an empty grid.
    res.grid.levels = K;
    res.grid.codebook_size = reference.codebook_size;
    return res;
  }
  res.grid = CodecGrid(rows, K, reference.codebook_size);
  for (int64_t t = 0; t < rows; ++t)
    for (int k = 0; k < K; ++k)
      res.grid.set(t, k, static_cast<uint16_t>(flat[static_cast<size_t>(t) * K + k]));
  res.grid.validate();
  return res;
}

}  // namespace mave
