#pragma once

// Discrete multi-level token grids and the infilling stream layout:
// span sampling, causal-masking rearrangement and its inverse, the per-level
// delay pattern and its inverse, prompt assembly for span regeneration, and
// grid/manifest file I/O.

#include <cstdint>
#include <string>
#include <vector>

#include "mave/errors.hpp"
#include "mave/rng.hpp"

namespace mave {

// Special token ids appended after the S real codebook entries. The same
// layout is replicated at every level so every frame stays a full K-vector.
struct SpecialVocab {
  int base_size;  // S

  static constexpr int kNumMask = 3;
  int mask(int j) const { return base_size + (j - 1); }  // j in 1..3
  int eos_span() const { return base_size + 3; }
  int bos() const { return base_size + 4; }
  int pad() const { return base_size + 5; }
  int extended_size() const { return base_size + 6; }
  bool is_special(int id) const { return id >= base_size; }
  // 1..3 when id is a mask token, else 0.
  int mask_index(int id) const {
    int d = id - base_size;
    return (d >= 0 && d < kNumMask) ? d + 1 : 0;
  }
};

// An L x K grid of codebook indices, row-major by time. All entries < S.
struct CodecGrid {
  int64_t length = 0;       // L frames
  int levels = 0;           // K
  int codebook_size = 0;    // S
  int frame_rate_hz = 50;   // metadata only
  std::vector<uint16_t> tokens;

  CodecGrid() = default;
  CodecGrid(int64_t L, int K, int S);

  uint16_t at(int64_t t, int k) const { return tokens[static_cast<size_t>(t) * levels + k]; }
  void set(int64_t t, int k, uint16_t v) { tokens[static_cast<size_t>(t) * levels + k] = v; }
  void validate() const;  // throws data_error on violated invariants
};

struct Span {
  int64_t start = 0;
  int64_t length = 0;
};
using SpanMask = std::vector<Span>;

// Check SpanMask invariants against a grid length: sorted, non-overlapping,
// in range, each length in [1, 600], at most SpecialVocab::kNumMask spans.
void validate_spans(const SpanMask& spans, int64_t grid_length);

// Draw a span mask: count m ~ min(Poisson(1), cap), lengths uniform on
// [1, min(max_len, longest free run)], positions uniform over all
// non-overlapping placements. Infeasible spans are retried with fresh
// lengths a bounded number of times, then dropped.
SpanMask sample_spans(int64_t grid_length, Rng& rng, int cap = 3, int64_t max_len = 600);

// Flat frame stream over the extended vocab encoding the infilling layout:
//   [BOS] [unmasked segments with MASK_j placeholders] then per span j:
//   [MASK_j trigger] [span frames] [EOS_SPAN].
struct RearrangedSequence {
  int levels = 0;
  int codebook_size = 0;
  std::vector<uint16_t> frames;  // T' x K
  struct SpanInfo {
    int mask_id = 0;        // 1-based mask index
    int64_t start = 0;      // original start frame in the source grid
    int64_t length = 0;     // original span length
  };
  std::vector<SpanInfo> spans;
  int64_t source_length = 0;

  int64_t num_frames() const {
    return levels ? static_cast<int64_t>(frames.size()) / levels : 0;
  }
  uint16_t at(int64_t t, int k) const { return frames[static_cast<size_t>(t) * levels + k]; }
};

RearrangedSequence rearrange(const CodecGrid& grid, const SpanMask& spans);

// Inverse of rearrange: splices trailing span blocks back into their
// placeholder positions and strips specials. Works from the frame stream
// itself (placeholder/trigger matching), so it also converts generated
// infills whose span lengths differ from the originals.
CodecGrid restore(const RearrangedSequence& seq);

// (L + K - 1) x K grid over the extended vocab: level k (0-based) shifted
// right by k frames, PAD in the vacated triangles.
struct DelayedGrid {
  int levels = 0;
  int codebook_size = 0;
  std::vector<uint16_t> frames;
  int64_t num_frames() const {
    return levels ? static_cast<int64_t>(frames.size()) / levels : 0;
  }
  uint16_t at(int64_t t, int k) const { return frames[static_cast<size_t>(t) * levels + k]; }
};

DelayedGrid apply_delay(const std::vector<uint16_t>& frames, int64_t num_frames,
                        int levels, int codebook_size);
inline DelayedGrid apply_delay(const RearrangedSequence& seq) {
  return apply_delay(seq.frames, seq.num_frames(), seq.levels, seq.codebook_size);
}

// Exact inverse; throws data_error if PAD appears outside the delay triangles.
std::vector<uint16_t> undo_delay(const DelayedGrid& d);

// Prompt for span regeneration: the rearranged stream truncated immediately
// after the first trailing trigger, plus the plan of spans to generate.
struct EditPrompt {
  int levels = 0;
  int codebook_size = 0;
  std::vector<uint16_t> prompt_frames;  // Tp x K, ends with the first trigger
  std::vector<RearrangedSequence::SpanInfo> plan;  // spans in generation order
  RearrangedSequence layout;  // full rearrangement of the source (for splicing)
};

EditPrompt build_edit_prompt(const CodecGrid& grid, const SpanMask& spans);

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

// Token grid file: magic "MAVETOK1", u32 L, u16 K, u32 S, then L*K u16
// little-endian ids. Extended-vocab ids are permitted in the file; use
// to_codec_grid() to enforce the all-ids-below-S invariant.
struct TokenFile {
  int64_t length = 0;
  int levels = 0;
  int codebook_size = 0;
  std::vector<uint16_t> tokens;

  CodecGrid to_codec_grid() const;
};

void save_tokens(const std::string& path, const TokenFile& tf);
void save_tokens(const std::string& path, const CodecGrid& g);
TokenFile load_tokens(const std::string& path);

// Manifest: one record per line, tab-separated: grid path, transcript, and an
// optional third field with spans as "start:len[,start:len...]" (used by
// generated evaluation sets).
struct ManifestEntry {
  std::string grid_path;
  std::string transcript;
  SpanMask spans;  // empty when the record has no third field
  bool has_spans = false;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Span string syntax shared by the manifest and the CLI: "start:len[,start:len...]".
SpanMask parse_spans(const std::string& text);
std::string format_spans(const SpanMask& spans);

}  // namespace mave
