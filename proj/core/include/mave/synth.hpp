#pragma once

// Deterministic synthetic corpus: utterances are random letter "words"; each
// phoneme (including word boundaries) expands to a fixed number of frames,
// and the token at (phoneme, within-phoneme offset, level, speaker) is a
// public hash — a learnable text-to-token mapping with a speaker component
// recoverable only from the tokens themselves.

#include <cstdint>
#include <string>
#include <vector>

#include "mave/codec.hpp"
#include "mave/rng.hpp"
#include "mave/text.hpp"

namespace mave {

struct SynthParams {
  int num_utterances = 200;
  int min_words = 2, max_words = 5;
  int min_word_len = 2, max_word_len = 3;
  int alphabet = 16;            // words drawn from 'a'..('a'+alphabet-1)
  int frames_per_phoneme = 2;   // r
  int num_speakers = 4;
  int levels = 8;               // K
  int codebook_size = 256;      // S
  uint64_t seed = 1;

  void validate() const {
    if (num_utterances < 1 || min_words < 1 || max_words < min_words ||
        min_word_len < 1 || max_word_len < min_word_len || alphabet < 1 ||
        alphabet > 26 || frames_per_phoneme < 1 || num_speakers < 1 ||
        levels < 1 || codebook_size < 1)
      throw data_error("synth params: invalid field");
  }
};

// The public token mapping: splitmix64 over packed coordinates, mod S.
inline uint16_t synth_token(int32_t phoneme, int offset, int level, int speaker,
                            int codebook_size) {
  uint64_t packed = (static_cast<uint64_t>(static_cast<uint32_t>(phoneme)) << 32) |
                    (static_cast<uint64_t>(static_cast<uint32_t>(offset) & 0xff) << 24) |
                    (static_cast<uint64_t>(static_cast<uint32_t>(level) & 0xff) << 16) |
                    (static_cast<uint64_t>(static_cast<uint32_t>(speaker) & 0xffff));
  return static_cast<uint16_t>(splitmix64(packed) %
                               static_cast<uint64_t>(codebook_size));
}

struct SynthUtterance {
  std::string text;
  std::vector<int32_t> phonemes;  // via the default phoneme table
  int speaker = 0;
  CodecGrid grid;
};

// Expand a phoneme sequence to its ground-truth grid for a speaker.
CodecGrid synth_grid(const std::vector<int32_t>& phonemes, int speaker,
                     const SynthParams& p);

// Draw one utterance (text, phonemes, speaker, grid).
SynthUtterance synth_utterance(const SynthParams& p, Rng& rng);

// Write num_utterances token files plus a manifest into out_dir. Grid file
// names are utt00000.tok etc. Returns the manifest path.
std::string generate_corpus(const SynthParams& p, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Word-masked evaluation construction
// ---------------------------------------------------------------------------

// For each manifest entry with at least six words, mask a contiguous run of
// m words, m uniform on [1, M] with M = min(word_count - 5, 15); the word run
// is mapped to a frame span via the fixed frames-per-phoneme alignment.
// Entries too short to keep five words unmasked while masking at least one
// are discarded. Output entries carry the span in the manifest third field.
std::vector<ManifestEntry> make_word_masked_eval(
    const std::vector<ManifestEntry>& entries, int frames_per_phoneme, Rng& rng);

// Frame-mode evaluation: one span per utterance, length uniform on
// [min_len, max(min_len, L/3)], position uniform.
std::vector<ManifestEntry> make_frame_masked_eval(
    const std::vector<ManifestEntry>& entries,
    const std::vector<int64_t>& grid_lengths, int64_t min_len, Rng& rng);

// Word index -> [start_frame, end_frame) span for a phonemized transcript.
// Word w covers its letters only (not surrounding boundaries) unless the run
// spans several words, in which case internal boundaries are included.
Span word_run_to_frame_span(const std::vector<int32_t>& phonemes, int boundary_id,
                            int first_word, int num_words, int frames_per_phoneme);

}  // namespace mave
