#include "mave/synth.hpp"

#include <filesystem>

namespace mave {

CodecGrid synth_grid(const std::vector<int32_t>& phonemes, int speaker,
                     const SynthParams& p) {
  int r = p.frames_per_phoneme;
  CodecGrid g(static_cast<int64_t>(phonemes.size()) * r, p.levels, p.codebook_size);
  int64_t t = 0;
  for (int32_t ph : phonemes)
    for (int o = 0; o < r; ++o, ++t)
      for (int k = 0; k < p.levels; ++k)
        g.set(t, k, synth_token(ph, o, k, speaker, p.codebook_size));
  return g;
}

SynthUtterance synth_utterance(const SynthParams& p, Rng& rng) {
  p.validate();
  SynthUtterance u;
  int words = static_cast<int>(rng.range(p.min_words, p.max_words));
  for (int w = 0; w < words; ++w) {
    if (w) u.text += ' ';
    int len = static_cast<int>(rng.range(p.min_word_len, p.max_word_len));
    for (int c = 0; c < len; ++c)
      u.text += static_cast<char>('a' + rng.below(static_cast<uint64_t>(p.alphabet)));
  }
  u.phonemes = phonemize(u.text, default_phoneme_table());
  u.speaker = static_cast<int>(rng.below(static_cast<uint64_t>(p.num_speakers)));
  u.grid = synth_grid(u.phonemes, u.speaker, p);
  return u;
}

std::string generate_corpus(const SynthParams& p, const std::string& out_dir) {
  p.validate();
  std::filesystem::create_directories(out_dir);
  Rng rng(p.seed);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < p.num_utterances; ++i) {
    SynthUtterance u = synth_utterance(p, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "utt%05d.tok", i);
    std::string path = out_dir + "/" + name;
    save_tokens(path, u.grid);
    entries.push_back({path, u.text, {}, false});
  }
  std::string manifest = out_dir + "/manifest.tsv";
  save_manifest(manifest, entries);
  return manifest;
}

Span word_run_to_frame_span(const std::vector<int32_t>& phonemes, int boundary_id,
                            int first_word, int num_words, int frames_per_phoneme) {
  // Phoneme index ranges per word.
  std::vector<std::pair<int64_t, int64_t>> words;
  int64_t start = 0;
  for (int64_t i = 0; i <= static_cast<int64_t>(phonemes.size()); ++i) {
    bool at_boundary = i == static_cast<int64_t>(phonemes.size()) ||
                       phonemes[static_cast<size_t>(i)] == boundary_id;
    if (at_boundary) {
      if (i > start) words.push_back({start, i});
      start = i + 1;
    }
  }
  if (first_word < 0 || num_words < 1 ||
      first_word + num_words > static_cast<int>(words.size()))
    throw data_error("word span: word run out of range");
  int64_t ph_start = words[static_cast<size_t>(first_word)].first;
  int64_t ph_end = words[static_cast<size_t>(first_word + num_words - 1)].second;
  return {ph_start * frames_per_phoneme, (ph_end - ph_start) * frames_per_phoneme};
}

std::vector<ManifestEntry> make_word_masked_eval(
    const std::vector<ManifestEntry>& entries, int frames_per_phoneme, Rng& rng) {
  PhonemeTable table = default_phoneme_table();
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    std::vector<int32_t> phonemes = phonemize(e.transcript, table);
    int64_t word_count = 1;
    for (int32_t p : phonemes)
      if (p == table.boundary_id) ++word_count;
    int64_t cap = std::min<int64_t>(word_count - 5, 15);
    if (cap < 1) continue;  // cannot mask a word and keep five unmasked
    int64_t m = rng.range(1, cap);
    int64_t first = rng.range(0, word_count - m);
    ManifestEntry o = e;
    o.spans = {word_run_to_frame_span(phonemes, table.boundary_id,
                                      static_cast<int>(first), static_cast<int>(m),
                                      frames_per_phoneme)};
    o.has_spans = true;
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<ManifestEntry> make_frame_masked_eval(
    const std::vector<ManifestEntry>& entries,
    const std::vector<int64_t>& grid_lengths, int64_t min_len, Rng& rng) {
  if (entries.size() != grid_lengths.size())
    throw data_error("frame eval: lengths list does not match manifest");
  std::vector<ManifestEntry> out;
  for (size_t i = 0; i < entries.size(); ++i) {
    int64_t L = grid_lengths[i];
    if (L < min_len + 2) continue;
    int64_t len = rng.range(min_len, std::max<int64_t>(min_len, L / 3));
    int64_t start = rng.range(0, L - len);
    ManifestEntry o = entries[i];
    o.spans = {{start, len}};
    o.has_spans = true;
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace mave
