#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mave/config.hpp"
#include "mave/costmodel.hpp"
#include "mave/generate.hpp"

using namespace mave;

namespace {

DecoderConfig gen_cfg(Variant v) {
  DecoderConfig c;
  c.variant = v;
  c.num_layers = 2;
  c.model_dim = 16;
  c.ssm_state_dim = 4;
  c.conv_width = 3;
  c.expand = 2;
  c.num_heads = 2;
  c.ffn_multiplier = 2;
  c.levels = 2;
  c.codebook_size = 32;
  c.phoneme_vocab = 28;
  return c;
}

EncoderConfig gen_enc() {
  EncoderConfig c;
  c.num_layers = 1;
  c.model_dim = 16;
  c.num_heads = 2;
  c.ffn_multiplier = 2;
  return c;
}

CodecGrid rand_grid(int64_t L, int K, int S, uint64_t seed) {
  CodecGrid g(L, K, S);
  Rng rng(seed);
  for (auto& t : g.tokens) t = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(S)));
  return g;
}

bool rows_equal(const CodecGrid& a, int64_t ra, const CodecGrid& b, int64_t rb) {
  for (int k = 0; k < a.levels; ++k)
    if (a.at(ra, k) != b.at(rb, k)) return false;
  return true;
}

}  // namespace

TEST_CASE("span replacement keeps everything outside the spans") {
  PhonemeTable table = default_phoneme_table();
  for (Variant var : {Variant::mamba_xattn, Variant::mamba_concat}) {
    Model<float> m = init_model<float>(gen_cfg(var), gen_enc(), 71);
    CodecGrid grid = rand_grid(20, 2, 32, 9);
    SpanMask spans = {{4, 3}, {10, 2}};
    GenerationParams gp;
    gp.top_p = 0.8;
    gp.max_frames_per_span = 8;
    gp.seed = 13;

    EditResult<float> r = generate_edit(m, grid, spans, "hello world test", gp, table);
    REQUIRE(r.report.span_lengths.size() == 2);
    int64_t g1 = r.report.span_lengths[0], g2 = r.report.span_lengths[1];
    CHECK(g1 <= 8);
    CHECK(g2 <= 8);
    CHECK(r.report.frames_generated == g1 + g2);
    REQUIRE(r.grid.length == 20 - 5 + g1 + g2);
    CHECK(r.grid.levels == 2);
    CHECK(r.grid.codebook_size == 32);
    for (uint16_t t : r.grid.tokens) CHECK(t < 32);  // no specials leak out

    for (int64_t t = 0; t < 4; ++t) CHECK(rows_equal(r.grid, t, grid, t));
    for (int64_t t = 7; t < 10; ++t)  // between the spans
      CHECK(rows_equal(r.grid, t - 3 + g1, grid, t));
    for (int64_t t = 12; t < 20; ++t)  // after the second span
      CHECK(rows_equal(r.grid, t - 5 + g1 + g2, grid, t));
  }
}

TEST_CASE("empty span list passes the grid through untouched") {
  Model<float> m = init_model<float>(gen_cfg(Variant::mamba_xattn), gen_enc(), 72);
  CodecGrid grid = rand_grid(11, 2, 32, 10);
  GenerationParams gp;
  EditResult<float> r =
      generate_edit(m, grid, {}, "anything", gp, default_phoneme_table());
  CHECK(r.grid.tokens == grid.tokens);
  CHECK(r.grid.length == grid.length);
  CHECK(r.report.frames_generated == 0);
  CHECK_FALSE(r.report.truncated);
}

TEST_CASE("edit sampling is reproducible in the seed") {
  PhonemeTable table = default_phoneme_table();
  Model<float> m = init_model<float>(gen_cfg(Variant::mamba_xattn), gen_enc(), 73);
  CodecGrid grid = rand_grid(16, 2, 32, 11);
  SpanMask spans = {{5, 4}};
  GenerationParams gp;
  gp.max_frames_per_span = 10;
  gp.seed = 99;
  EditResult<float> a = generate_edit(m, grid, spans, "same words", gp, table);
  EditResult<float> b = generate_edit(m, grid, spans, "same words", gp, table);
  CHECK(a.grid.tokens == b.grid.tokens);
  CHECK(a.report.span_lengths == b.report.span_lengths);
  gp.seed = 100;
  EditResult<float> c = generate_edit(m, grid, spans, "same words", gp, table);
  bool same = a.grid.tokens == c.grid.tokens && a.grid.length == c.grid.length;
  CHECK_FALSE(same);  // a different seed explores a different path
}

TEST_CASE("span budget truncates runaway spans") {
  PhonemeTable table = default_phoneme_table();
  Model<float> m = init_model<float>(gen_cfg(Variant::mamba_xattn), gen_enc(), 74);
  CodecGrid grid = rand_grid(12, 2, 32, 12);
  SpanMask spans = {{2, 6}};
  GenerationParams gp;
  gp.max_frames_per_span = 1;  // almost every draw must hit the budget
  int truncated = 0;
  for (uint64_t s = 0; s < 5; ++s) {
    gp.seed = s;
    EditResult<float> r = generate_edit(m, grid, spans, "abc def", gp, table);
    CHECK(r.report.span_lengths[0] <= 1);
    truncated += r.report.truncated ? 1 : 0;
  }
  CHECK(truncated >= 1);
}

TEST_CASE("continuation from a reference prefix") {
  PhonemeTable table = default_phoneme_table();
  for (Variant var : {Variant::mamba_xattn, Variant::mamba_concat}) {
    Model<float> m = init_model<float>(gen_cfg(var), gen_enc(), 75);
    CodecGrid ref = rand_grid(6, 2, 32, 13);
    GenerationParams gp;
    gp.max_frames_per_span = 12;
    gp.seed = 5;
    EditResult<float> r = generate_tts(m, ref, "ab cd", "ef gh", gp, table);
    CHECK(r.grid.levels == 2);
    CHECK(r.grid.codebook_size == 32);
    CHECK(r.grid.length == r.report.frames_generated);
    CHECK(r.grid.length <= 12);
    REQUIRE(r.report.span_lengths.size() == 1);
    for (uint16_t t : r.grid.tokens) CHECK(t < 32);
    EditResult<float> again = generate_tts(m, ref, "ab cd", "ef gh", gp, table);
    CHECK(r.grid.tokens == again.grid.tokens);
  }
}

TEST_CASE("cost model worked examples") {
  // Decoder-only transformer: nd*h0*(ly*lx + ly^2/2).
  CostModel a{10, 100, 2, 4, 1, 1, 1};
  CHECK(predict_decoder_only(a) == 48000);
  CHECK(predict_ffn_per_token(a) == 8);
  a.ly = 0;
  CHECK(predict_decoder_only(a) == 0);

  // Recurrent decoder with cross-attention: md*h*ly*(lx+1).
  CostModel b{10, 100, 1, 1, 1, 2, 4};
  CHECK(predict_mamba_decoder(b) == 8800);
  b.ly = 0;
  CHECK(predict_mamba_decoder(b) == 0);

  // Encoder: ne*h*lx^2; lx=1 collapses to ne*h.
  CostModel c{1, 1, 1, 1, 3, 1, 4};
  CHECK(predict_encoder(c) == 12);
  c.lx = 5;
  CHECK(predict_encoder(c) == 300);

  CostModel bad{0, 5, 1, 1, 1, 1, 1};
  CHECK_THROWS_AS((void)predict_encoder(bad), data_error);
}

TEST_CASE("least squares fit") {
  std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> y = {5, 8, 11, 14};  // 3x + 2
  LinearFit f = linear_fit(x, y);
  CHECK(std::fabs(f.slope - 3.0) < 1e-12);
  CHECK(std::fabs(f.intercept - 2.0) < 1e-12);
  CHECK(std::fabs(f.r2 - 1.0) < 1e-12);

  LinearFit c = linear_fit(x, {7, 7, 7, 7});
  CHECK(c.slope == 0.0);
  CHECK(c.intercept == 7.0);
  CHECK(c.r2 == 1.0);  // constant series fit exactly

  LinearFit n = linear_fit(x, {5.5, 7.4, 11.9, 13.6});
  CHECK(n.r2 < 1.0);
  CHECK(n.r2 > 0.9);

  LinearFit d = linear_fit({2, 2, 2}, {1, 2, 3});  // no x spread
  CHECK(d.slope == 0.0);
  CHECK(d.intercept == 2.0);
  CHECK(d.r2 == 0.0);

  CHECK_THROWS_AS((void)linear_fit({1}, {1}), data_error);
  CHECK_THROWS_AS((void)linear_fit({1, 2}, {1, 2, 3}), data_error);
}

TEST_CASE("log-log scaling exponent") {
  std::vector<double> x = {1, 2, 4, 8, 16};
  std::vector<double> quad(x.size()), lin(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    quad[i] = 5.0 * x[i] * x[i];
    lin[i] = 3.0 * x[i];
  }
  CHECK(std::fabs(loglog_exponent(x, quad) - 2.0) < 1e-12);
  CHECK(std::fabs(loglog_exponent(x, lin) - 1.0) < 1e-12);
  CHECK_THROWS_AS((void)loglog_exponent({1, -1}, {1, 1}), data_error);
  CHECK_THROWS_AS((void)loglog_exponent({1, 2}, {0, 1}), data_error);
}

TEST_CASE("instrumented generation measurements") {
  DecoderConfig dc = gen_cfg(Variant::mamba_xattn);
  EncoderConfig ec = gen_enc();
  std::vector<int64_t> lys = {2, 4, 6, 8};
  BenchReport rep = measure_generation(
      dc, ec, {Variant::mamba_xattn, Variant::transformer_xattn}, {4}, lys, 2, 5);
  REQUIRE(rep.series.size() == 2);

  const BenchSeries& mam = rep.series[0];
  const BenchSeries& trf = rep.series[1];
  REQUIRE(mam.variant == Variant::mamba_xattn);
  REQUIRE(trf.variant == Variant::transformer_xattn);

  for (const BenchSeries* s : {&mam, &trf}) {
    REQUIRE(s->points.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
      const BenchPoint& p = s->points[i];
      CHECK(p.ly == lys[i]);
      CHECK(p.measured_interaction > 0);
      CHECK(p.measured_overhead > 0);
      if (i) CHECK(p.measured_interaction > s->points[i - 1].measured_interaction);
      // The attention counter tallies both the score and the value product,
      // so one encoder pass counts exactly twice the symbolic prediction.
      CHECK(p.encoder_measured == 2 * p.encoder_predicted);
      CHECK(p.text_cache_bytes ==
            static_cast<int64_t>(dc.num_layers) * 2 * 4 * dc.model_dim * 4);
    }
    CHECK(s->total_fit.r2 > 0.99);
  }

  // Recurrent decoder: flat per-step cost, fixed state, exactly linear totals.
  for (size_t t = 1; t < mam.per_token_interaction.size(); ++t)
    CHECK(mam.per_token_interaction[t] == mam.per_token_interaction[0]);
  CHECK(mam.per_token_fit.slope == 0.0);
  CHECK(std::fabs(mam.exponent - 1.0) < 1e-9);
  for (const BenchPoint& p : mam.points) CHECK(p.state_bytes_first == p.state_bytes_last);

  // Transformer decoder: growing per-step cost, growing cache, superlinear.
  for (size_t t = 1; t < trf.per_token_interaction.size(); ++t)
    CHECK(trf.per_token_interaction[t] > trf.per_token_interaction[t - 1]);
  CHECK(trf.per_token_fit.slope > 0.0);
  CHECK(trf.exponent > 1.1);
  for (const BenchPoint& p : trf.points) CHECK(p.state_bytes_last > p.state_bytes_first);

  std::string text = format_report(rep);
  CHECK(text.find("record\tmamba_xattn") != std::string::npos);
  CHECK(text.find("series\ttransformer_xattn") != std::string::npos);
  CHECK(text.find("plot\t") != std::string::npos);

  CHECK_THROWS_AS((void)measure_generation(dc, ec, {Variant::mamba_xattn}, {4},
                                           {2, 4, 6}, 1, 5),
                  data_error);
  CHECK_THROWS_AS((void)measure_generation(dc, ec, {}, {4}, lys, 1, 5), data_error);
}

TEST_CASE("configuration presets") {
  for (const std::string& name : preset_names()) {
    FullConfig c = preset_config(name);
    c.validate();
    CHECK(c.preset == name);
  }
  FullConfig desk = preset_config("desk");
  CHECK(desk.dec.variant == Variant::mamba_xattn);
  CHECK(desk.dec.num_layers == 6);
  CHECK(desk.dec.model_dim == 96);
  CHECK(desk.dec.ssm_state_dim == 16);
  CHECK(desk.dec.levels == 8);
  CHECK(desk.dec.codebook_size == 256);
  CHECK(desk.enc.num_layers == 2);
  CHECK(preset_config("desk-transformer").dec.variant == Variant::transformer_xattn);
  CHECK(preset_config("desk-concat").dec.variant == Variant::mamba_concat);

  FullConfig big = preset_config("paper-830m");
  CHECK(big.dec.num_layers == 12);
  CHECK(big.dec.model_dim == 1808);
  CHECK(big.enc.num_layers == 4);
  CHECK(big.dec.codebook_size == 1024);
  CHECK(preset_config("paper-830m-transformer").dec.model_dim == 1840);
  FullConfig concat = preset_config("paper-830m-concat");
  CHECK(concat.dec.num_layers == 16);
  CHECK(concat.dec.model_dim == 2016);

  CHECK_THROWS_AS((void)preset_config("nope"), data_error);
}

TEST_CASE("config parsing, formatting, digests") {
  FullConfig c = preset_config("desk");
  c.trainer.lr = 1.25e-3;
  c.gen.top_p = 0.9;
  std::string text = format_config(c);
  FullConfig back = parse_config(text);
  CHECK(format_config(back) == text);  // exact round trip
  CHECK(config_digest(back) == config_digest(c));
  CHECK(config_digest(c).size() == 16);

  FullConfig other = c;
  other.trainer.lr = 2e-3;
  CHECK(config_digest(other) != config_digest(c));

  FullConfig t = parse_config(
      "preset = desk-transformer\n"
      "[trainer]\n"
      "lr = 0.001\n"
      "# comment line\n"
      "[generation]\n"
      "top_p = 0.75\n");
  CHECK(t.dec.variant == Variant::transformer_xattn);
  CHECK(t.trainer.lr == 0.001);
  CHECK(t.gen.top_p == 0.75);

  FullConfig w = parse_config(
      "[model]\n"
      "levels = 3\n"
      "[trainer]\n"
      "level_weights = 0.5, 0.3, 0.2\n");
  CHECK(w.dec.levels == 3);
  REQUIRE(w.level_weights.size() == 3);
  CHECK(w.level_weights[1] == 0.3);
  w.validate();

  CHECK_THROWS_AS((void)parse_config("[model]\nbogus_key = 1\n"), data_error);
  CHECK_THROWS_AS((void)parse_config("[warp]\nlr = 1\n"), data_error);
  CHECK_THROWS_AS((void)parse_config("preset = unknown-name\n"), data_error);
  CHECK_THROWS_AS((void)parse_config("[model]\nlevels = 2\npreset = desk\n"),
                  data_error);
  CHECK_THROWS_AS((void)parse_config("[model]\nlevels = abc\n"), data_error);
  CHECK_THROWS_AS((void)load_config("no_such_config.ini"), io_error);
}

TEST_CASE("checkpoint container round trip") {
  Tensor<float> w(Shape{2, 3});
  Tensor<float> b(Shape{3});
  for (int64_t i = 0; i < 6; ++i) w.mut()[i] = 0.5f * static_cast<float>(i) - 1.0f;
  for (int64_t i = 0; i < 3; ++i) b.mut()[i] = static_cast<float>(i) + 0.25f;
  std::string path = "ckpt_roundtrip.bin";
  save_checkpoint<float>(path, {{"w", &w}, {"b", &b}});

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded.count("w") == 1);
  CHECK(loaded.at("w").dim(0) == 2);
  CHECK(loaded.at("w").dim(1) == 3);
  for (int64_t i = 0; i < 6; ++i) CHECK(loaded.at("w").at(i) == w.at(i));
  for (int64_t i = 0; i < 3; ++i) CHECK(loaded.at("b").at(i) == b.at(i));

  Tensor<float> w2(Shape{2, 3}), b2(Shape{3}), extra(Shape{4});
  assign_from_checkpoint<float>(loaded, {{"w", &w2}, {"b", &b2}});
  for (int64_t i = 0; i < 6; ++i) CHECK(w2.at(i) == w.at(i));
  CHECK_THROWS_AS(assign_from_checkpoint<float>(loaded, {{"missing", &extra}}),
                  data_error);
  Tensor<float> wrong(Shape{3, 2});
  CHECK_THROWS_AS(assign_from_checkpoint<float>(loaded, {{"w", &wrong}}), data_error);
  std::remove(path.c_str());

  CHECK_THROWS_AS((void)load_checkpoint("definitely_missing.bin"), io_error);
  std::ofstream bad("bad_magic.bin", std::ios::binary);
  bad << "NOTMAGIC12345678";
  bad.close();
  CHECK_THROWS_AS((void)load_checkpoint("bad_magic.bin"), io_error);
  std::remove("bad_magic.bin");
}
