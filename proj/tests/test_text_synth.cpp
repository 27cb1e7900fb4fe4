#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mave/synth.hpp"
#include "mave/text.hpp"

using namespace mave;

TEST_CASE("text normalization and phonemization") {
  CHECK(normalize_text("  HeLLo   World ") == "hello world");
  CHECK(normalize_text("a\tb\nc") == "a b c");
  CHECK(normalize_text("   ") == "");

  PhonemeTable t = default_phoneme_table();
  CHECK(t.boundary_id == 27);
  CHECK(t.vocab_size == 28);
  std::vector<int32_t> want = {1, 2, 27, 3, 4};
  CHECK(phonemize("ab cd", t) == want);
  CHECK(phonemize("AB  cd", t) == want);
  // Unknown characters map to UNK 0.
  std::vector<int32_t> unk = phonemize("a!b", t);
  CHECK(unk == std::vector<int32_t>{1, 0, 2});
  CHECK_THROWS_AS(phonemize("   ", t), data_error);
}

TEST_CASE("phoneme table files") {
  std::string path = "table_test.tsv";
  {
    std::ofstream os(path);
    os << "# comment\n";
    os << "a\t1\n";
    os << "b\t5\n";
  }
  PhonemeTable t = load_phoneme_table(path);
  CHECK(t.to_id.at('a') == 1);
  CHECK(t.to_id.at('b') == 5);
  CHECK(t.boundary_id == 6);
  CHECK(t.vocab_size == 7);
  {
    std::ofstream os(path);
    os << "ab\t1\n";  // multi-character grapheme
  }
  CHECK_THROWS_AS(load_phoneme_table(path), data_error);
  {
    std::ofstream os(path);
    os << "a\t0\n";  // id 0 is reserved
  }
  CHECK_THROWS_AS(load_phoneme_table(path), data_error);
  std::remove(path.c_str());
}

TEST_CASE("sinusoidal positions match the closed form") {
  Tensor<double> p = sinusoid_positions<double>(3, 4, 0);
  CHECK(p.at(0, 0) == 0.0);            // sin(0)
  CHECK(p.at(0, 1) == 1.0);            // cos(0)
  CHECK(p.at(0, 2) == 0.0);
  CHECK(p.at(0, 3) == 1.0);
  CHECK(p.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  CHECK(p.at(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
  double f2 = std::pow(10000.0, -2.0 / 4.0);
  CHECK(p.at(2, 2) == doctest::Approx(std::sin(2.0 * f2)).epsilon(1e-12));
  CHECK(p.at(2, 3) == doctest::Approx(std::cos(2.0 * f2)).epsilon(1e-12));

  // first_pos offsets the table rows.
  Tensor<double> q = sinusoid_positions<double>(1, 4, 2);
  CHECK(q.at(0, 2) == doctest::Approx(p.at(2, 2)).epsilon(1e-12));
}

TEST_CASE("encoder output is deterministic with unit attention rows") {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.model_dim = 16;
  cfg.num_heads = 4;
  cfg.ffn_multiplier = 2;
  Rng rng(5);
  EncoderParams<double> params = init_encoder_params<double>(cfg, rng);
  Context<double> ctx{nullptr, nullptr};
  std::vector<int32_t> phonemes = {1, 2, 27, 3};
  std::vector<double> attn;
  Tensor<double> z = encode_text(ctx, cfg, params, phonemes, &attn);
  CHECK(z.dim(0) == 4);
  CHECK(z.dim(1) == 16);

  REQUIRE(attn.size() == static_cast<size_t>(4 * 4 * 4));  // heads x tq x s
  for (int h = 0; h < 4; ++h)
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += attn[static_cast<size_t>((h * 4 + i) * 4 + j)];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

  Rng rng2(5);
  EncoderParams<double> params2 = init_encoder_params<double>(cfg, rng2);
  Tensor<double> z2 = encode_text(ctx, cfg, params2, phonemes);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == z2.at(i));

  CHECK_THROWS_AS(encode_text(ctx, cfg, params, {}), data_error);
  std::vector<int32_t> too_long(static_cast<size_t>(cfg.max_positions) + 1, 1);
  CHECK_THROWS_AS(encode_text(ctx, cfg, params, too_long), data_error);
}

TEST_CASE("synthetic grids follow the public token mapping") {
  SynthParams p;
  p.frames_per_phoneme = 2;
  PhonemeTable t = default_phoneme_table();
  std::vector<int32_t> ph = phonemize("ab cd", t);  // 5 phonemes with boundary
  CodecGrid g = synth_grid(ph, 3, p);
  CHECK(g.length == 10);  // 5 phonemes x 2 frames
  CHECK(g.levels == 8);
  for (size_t i = 0; i < ph.size(); ++i)
    for (int off = 0; off < 2; ++off)
      for (int k = 0; k < 8; ++k)
        CHECK(g.at(static_cast<int64_t>(i) * 2 + off, k) ==
              synth_token(ph[i], off, k, 3, p.codebook_size));

  // Tokens recover the speaker: different speakers give different grids.
  CodecGrid g2 = synth_grid(ph, 1, p);
  CHECK(g2.tokens != g.tokens);
}

TEST_CASE("corpus generation is deterministic and loadable") {
  namespace fs = std::filesystem;
  SynthParams p;
  p.num_utterances = 12;
  p.seed = 31;
  std::string dir = "synth_corpus_test";
  fs::remove_all(dir);
  std::string manifest = generate_corpus(p, dir);
  auto entries = load_manifest(manifest);
  REQUIRE(entries.size() == 12);

  PhonemeTable t = default_phoneme_table();
  for (const auto& e : entries) {
    TokenFile tf = load_tokens(e.grid_path);
    CodecGrid g = tf.to_codec_grid();
    // Transcript + grid length agree through the fixed alignment.
    std::vector<int32_t> ph = phonemize(e.transcript, t);
    CHECK(g.length == static_cast<int64_t>(ph.size()) * p.frames_per_phoneme);
  }

  // Same seed, second run: identical manifest bytes.
  std::string dir2 = "synth_corpus_test2";
  fs::remove_all(dir2);
  std::string manifest2 = generate_corpus(p, dir2);
  std::ifstream a(manifest), b(manifest2);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  std::string ta = sa.str(), tb = sb.str();
  // Paths differ by directory; compare transcripts only.
  auto e1 = load_manifest(manifest);
  auto e2 = load_manifest(manifest2);
  REQUIRE(e1.size() == e2.size());
  for (size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1[i].transcript == e2[i].transcript);
    CHECK(load_tokens(e1[i].grid_path).tokens == load_tokens(e2[i].grid_path).tokens);
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("word runs map to frame spans through the fixed alignment") {
  PhonemeTable t = default_phoneme_table();
  std::vector<int32_t> ph = phonemize("ab cd ef", t);  // 1 2 27 3 4 27 5 6
  // Word 1 ("cd") covers phoneme indices 3..4 -> frames [6, 10) at r=2.
  Span s = word_run_to_frame_span(ph, t.boundary_id, 1, 1, 2);
  CHECK(s.start == 6);
  CHECK(s.length == 4);
  // Words 1..2 include the internal boundary: indices 3..7 -> frames [6, 16).
  Span s2 = word_run_to_frame_span(ph, t.boundary_id, 1, 2, 2);
  CHECK(s2.start == 6);
  CHECK(s2.length == 10);
  // First word: indices 0..1 -> frames [0, 4).
  Span s0 = word_run_to_frame_span(ph, t.boundary_id, 0, 1, 2);
  CHECK(s0.start == 0);
  CHECK(s0.length == 4);
}

TEST_CASE("word-masked evaluation keeps five words unmasked") {
  namespace fs = std::filesystem;
  SynthParams p;
  p.num_utterances = 30;
  p.min_words = 4;
  p.max_words = 9;
  p.seed = 77;
  std::string dir = "synth_eval_test";
  fs::remove_all(dir);
  std::string manifest = generate_corpus(p, dir);
  auto entries = load_manifest(manifest);
  Rng rng(5);
  auto eval = make_word_masked_eval(entries, p.frames_per_phoneme, rng);
  CHECK(!eval.empty());
  PhonemeTable t = default_phoneme_table();
  for (const auto& e : eval) {
    REQUIRE(e.has_spans);
    REQUIRE(e.spans.size() == 1);
    // Count words and reconstruct the masked word run from the span.
    std::vector<int32_t> ph = phonemize(e.transcript, t);
    int words = 1;
    for (int32_t id : ph) words += id == t.boundary_id;
    REQUIRE(words >= 6);
    // The masked run never exceeds words - 5 (at least five words stay).
    int64_t r = p.frames_per_phoneme;
    int masked_words = 1;
    int64_t first = e.spans[0].start / r;
    int64_t last = (e.spans[0].start + e.spans[0].length) / r;  // one past
    for (int64_t i = first; i < last; ++i) masked_words += ph[static_cast<size_t>(i)] == t.boundary_id;
    CHECK(masked_words <= words - 5);
    CHECK(masked_words <= 15);
  }
  // Entries with fewer than six words are dropped, never padded out.
  std::vector<ManifestEntry> shorties(1);
  shorties[0].grid_path = "x.tok";
  shorties[0].transcript = "aa bb cc dd ee";  // five words: cannot mask any
  Rng rng2(1);
  CHECK(make_word_masked_eval(shorties, p.frames_per_phoneme, rng2).empty());
  fs::remove_all(dir);
}

TEST_CASE("frame-masked evaluation draws one in-range span per entry") {
  std::vector<ManifestEntry> entries(3);
  for (size_t i = 0; i < 3; ++i) {
    entries[i].grid_path = "g" + std::to_string(i) + ".tok";
    entries[i].transcript = "aa bb";
  }
  std::vector<int64_t> lengths = {30, 60, 90};
  Rng rng(8);
  auto eval = make_frame_masked_eval(entries, lengths, 4, rng);
  REQUIRE(eval.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(eval[i].spans.size() == 1);
    const Span& s = eval[i].spans[0];
    CHECK(s.length >= 4);
    CHECK(s.length <= std::max<int64_t>(4, lengths[i] / 3));
    CHECK(s.start >= 0);
    CHECK(s.start + s.length <= lengths[i]);
  }
}
