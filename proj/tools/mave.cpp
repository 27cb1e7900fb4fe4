// Command-line entry point: corpus synthesis, eval-set construction, training,
// span editing, prefix continuation, cost benchmarking, and self checks.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric abort.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mave/config.hpp"
#include "mave/costmodel.hpp"
#include "mave/generate.hpp"
#include "mave/gradcheck.hpp"
#include "mave/synth.hpp"

#ifndef MAVE_VERSION
#define MAVE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace mave;

namespace {

std::vector<std::string> g_args;  // raw argv for provenance echoes

// Every command records how to reproduce itself: the exact arguments, the
// seed, the code version and (when a model config participates) its digest
// plus a loadable config.ini next to the header.
void write_provenance(const std::string& out_dir, const std::string& command,
                      uint64_t seed, const FullConfig* cfg) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "provenance.txt");
  if (!os) throw io_error("cannot write provenance header in " + out_dir);
  os << "command = " << command << "\n";
  os << "version = " << MAVE_VERSION << "\n";
  os << "seed = " << seed << "\n";
  os << "args =";
  for (const auto& a : g_args) os << " " << a;
  os << "\n";
  if (cfg) {
    os << "config_digest = " << config_digest(*cfg) << "\n";
    os << "config_file = config.ini\n";
    std::ofstream cf(fs::path(out_dir) / "config.ini");
    if (!cf) throw io_error("cannot write config.ini in " + out_dir);
    cf << format_config(*cfg);
  }
}

PhonemeTable table_from(const std::string& path) {
  return path.empty() ? default_phoneme_table() : load_phoneme_table(path);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string out_dir = "out";
  uint64_t seed = 0;
  int utterances = 200;
  int levels = 8;
  int codebook = 256;
  int speakers = 4;
  int frames_per_phoneme = 2;
  int min_words = 2, max_words = 5;
  int alphabet = 16;
};

int cmd_gen_data(const GenDataOpts& o) {
  SynthParams p;
  p.num_utterances = o.utterances;
  p.levels = o.levels;
  p.codebook_size = o.codebook;
  p.num_speakers = o.speakers;
  p.frames_per_phoneme = o.frames_per_phoneme;
  p.min_words = o.min_words;
  p.max_words = o.max_words;
  p.alphabet = o.alphabet;
  p.seed = o.seed;
  p.validate();
  write_provenance(o.out_dir, "gen-data", o.seed, nullptr);
  std::string manifest = generate_corpus(p, o.out_dir);
  std::cout << "manifest=" << manifest << " utterances=" << p.num_utterances
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// make-eval
// ---------------------------------------------------------------------------

struct MakeEvalOpts {
  std::string manifest;
  std::string mode;
  std::string out_dir = "out";
  uint64_t seed = 0;
  int frames_per_phoneme = 2;
  int64_t min_len = 4;
};

int cmd_make_eval(const MakeEvalOpts& o) {
  write_provenance(o.out_dir, "make-eval", o.seed, nullptr);
  std::vector<ManifestEntry> entries = load_manifest(o.manifest);
  Rng rng(o.seed);
  std::vector<ManifestEntry> picked;
  if (o.mode == "words") {
    picked = make_word_masked_eval(entries, o.frames_per_phoneme, rng);
  } else {
    std::vector<int64_t> lengths;
    lengths.reserve(entries.size());
    for (const auto& e : entries) lengths.push_back(load_tokens(e.grid_path).length);
    picked = make_frame_masked_eval(entries, lengths, o.min_len, rng);
  }
  std::string out_path = (fs::path(o.out_dir) / "eval_manifest.tsv").string();
  save_manifest(out_path, picked);
  std::cout << "eval_manifest=" << out_path << " entries=" << picked.size()
            << " (from " << entries.size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string manifest, config, preset = "desk", out_dir = "out", phoneme_table;
  uint64_t seed = 0;
  int steps = -1, batch = -1, grad_accum = -1, warmup = -1;
  int log_every = -1, ckpt_every = -1, eval_every = -1;
  double lr = -1.0, target_acc = -1.0, grad_clip = -1.0;
};

FullConfig resolve_config(const std::string& config, const std::string& preset) {
  return config.empty() ? preset_config(preset) : load_config(config);
}

int cmd_train(const TrainOpts& o) {
  FullConfig cfg = resolve_config(o.config, o.preset);
  if (o.steps >= 0) cfg.trainer.steps = o.steps;
  if (o.batch >= 0) cfg.trainer.batch_size = o.batch;
  if (o.grad_accum >= 0) cfg.trainer.grad_accum = o.grad_accum;
  if (o.warmup >= 0) cfg.trainer.warmup_steps = o.warmup;
  if (o.log_every >= 0) cfg.trainer.log_every = o.log_every;
  if (o.ckpt_every >= 0) cfg.trainer.ckpt_every = o.ckpt_every;
  if (o.eval_every >= 0) cfg.trainer.eval_every = o.eval_every;
  if (o.lr >= 0) cfg.trainer.lr = o.lr;
  if (o.target_acc >= 0) cfg.trainer.target_train_acc = o.target_acc;
  if (o.grad_clip >= 0) cfg.trainer.grad_clip = o.grad_clip;
  cfg.trainer.seed = o.seed;
  cfg.validate();
  write_provenance(o.out_dir, "train", o.seed, &cfg);

  PhonemeTable table = table_from(o.phoneme_table);
  std::vector<LoadedExample> corpus = load_corpus(load_manifest(o.manifest), table);
  Model<float> model = init_model<float>(cfg.dec, cfg.enc, o.seed);

  std::string ckpt = (fs::path(o.out_dir) / "model.ckpt").string();
  std::ofstream metrics(fs::path(o.out_dir) / "metrics.log");
  if (!metrics) throw io_error("cannot write metrics.log in " + o.out_dir);
  TrainStats st =
      train_loop(model, corpus, cfg.trainer, cfg.loss_weights(), metrics, ckpt);

  std::ofstream side(ckpt + ".cfg");
  if (!side) throw io_error("cannot write checkpoint config sidecar");
  side << format_config(cfg);

  std::cout << "steps=" << st.steps_run << " final_loss=" << st.final_loss
            << " stop=" << st.stop_reason << "\n"
            << "checkpoint=" << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// edit / tts
// ---------------------------------------------------------------------------

struct GenOpts {
  std::string checkpoint, config, out_dir = "out", phoneme_table;
  std::string grid, spans, text;          // edit
  std::string ref_grid, ref_text;         // tts
  uint64_t seed = 0;
  double top_p = -1.0, temperature = -1.0;
  int64_t max_frames = -1;
};

GenerationParams resolve_gen_params(const FullConfig& cfg, const GenOpts& o) {
  GenerationParams gp = cfg.gen;
  if (o.top_p >= 0) gp.top_p = o.top_p;
  if (o.temperature >= 0) gp.temperature = o.temperature;
  if (o.max_frames >= 0) gp.max_frames_per_span = o.max_frames;
  gp.seed = o.seed;
  gp.validate();
  return gp;
}

Model<float> load_trained(const FullConfig& cfg, const std::string& checkpoint) {
  Model<float> model = init_model<float>(cfg.dec, cfg.enc, 0);
  load_model_params(checkpoint, model);
  return model;
}

void write_gen_report(const std::string& out_dir, const GenerateReport& rep,
                      const std::string& tokens_name) {
  std::ofstream os(fs::path(out_dir) / "report.txt");
  if (!os) throw io_error("cannot write report.txt in " + out_dir);
  std::ostringstream body;
  body << "frames_generated = " << rep.frames_generated << "\n";
  body << "truncated = " << (rep.truncated ? 1 : 0) << "\n";
  body << "span_lengths =";
  for (size_t i = 0; i < rep.span_lengths.size(); ++i)
    body << (i ? "," : " ") << rep.span_lengths[i];
  body << "\n";
  body << "output = " << tokens_name << "\n";
  os << body.str();
  std::cout << body.str();
}

int cmd_edit(const GenOpts& o) {
  FullConfig cfg = o.config.empty() ? load_config(o.checkpoint + ".cfg")
                                    : load_config(o.config);
  cfg.validate();
  GenerationParams gp = resolve_gen_params(cfg, o);
  write_provenance(o.out_dir, "edit", o.seed, &cfg);

  Model<float> model = load_trained(cfg, o.checkpoint);
  CodecGrid grid = load_tokens(o.grid).to_codec_grid();
  SpanMask spans = parse_spans(o.spans);
  validate_spans(spans, grid.length);
  PhonemeTable table = table_from(o.phoneme_table);

  EditResult<float> r = generate_edit(model, grid, spans, o.text, gp, table);
  save_tokens((fs::path(o.out_dir) / "edit.tokens").string(), r.grid);
  write_gen_report(o.out_dir, r.report, "edit.tokens");
  return 0;
}

int cmd_tts(const GenOpts& o) {
  FullConfig cfg = o.config.empty() ? load_config(o.checkpoint + ".cfg")
                                    : load_config(o.config);
  cfg.validate();
  GenerationParams gp = resolve_gen_params(cfg, o);
  write_provenance(o.out_dir, "tts", o.seed, &cfg);

  Model<float> model = load_trained(cfg, o.checkpoint);
  CodecGrid ref = load_tokens(o.ref_grid).to_codec_grid();
  PhonemeTable table = table_from(o.phoneme_table);

  EditResult<float> r = generate_tts(model, ref, o.ref_text, o.text, gp, table);
  save_tokens((fs::path(o.out_dir) / "tts.tokens").string(), r.grid);
  write_gen_report(o.out_dir, r.report, "tts.tokens");
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOpts {
  std::string config, preset = "desk", out_dir = "out", out;
  std::vector<std::string> variants = {"mamba_xattn", "transformer_xattn"};
  std::vector<int64_t> lx = {16};
  std::vector<int64_t> ly = {64, 128, 256, 512};
  int reps = 1;
  uint64_t seed = 0;
};

int cmd_bench(const BenchOpts& o) {
  FullConfig cfg = resolve_config(o.config, o.preset);
  cfg.validate();
  write_provenance(o.out_dir, "bench", o.seed, &cfg);
  std::vector<Variant> vars;
  for (const auto& name : o.variants) vars.push_back(parse_variant(name));
  BenchReport rep =
      measure_generation(cfg.dec, cfg.enc, vars, o.lx, o.ly, o.reps, o.seed);
  std::string text = format_report(rep);
  std::string out_path =
      o.out.empty() ? (fs::path(o.out_dir) / "report.txt").string() : o.out;
  std::ofstream os(out_path);
  if (!os) throw io_error("cannot write bench report: " + out_path);
  os << text;
  std::cout << text;
  std::cout << "report=" << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// grad-check / selfcheck
// ---------------------------------------------------------------------------

DecoderConfig check_dec_cfg(Variant v) {
  DecoderConfig c;
  c.variant = v;
  c.num_layers = 2;
  c.model_dim = 12;
  c.ssm_state_dim = 3;
  c.conv_width = 3;
  c.expand = 2;
  c.num_heads = 2;
  c.ffn_multiplier = 2;
  c.levels = 2;
  c.codebook_size = 24;
  c.phoneme_vocab = 28;
  return c;
}

EncoderConfig check_enc_cfg() {
  EncoderConfig c;
  c.num_layers = 1;
  c.model_dim = 12;
  c.num_heads = 2;
  c.ffn_multiplier = 2;
  return c;
}

// End-to-end analytic-vs-numeric gradient comparison on a toy model: build a
// masked training example, differentiate the weighted NLL through decoder,
// encoder and scan, and probe a few coordinates of every parameter.
GradCheckResult check_variant_gradients(Variant var, uint64_t seed,
                                        size_t per_param) {
  Model<double> model = init_model<double>(check_dec_cfg(var), check_enc_cfg(), seed);
  CodecGrid grid(6, 2, 24);
  Rng grid_rng(derive_seed(seed, 0x61D));
  for (auto& t : grid.tokens) t = static_cast<uint16_t>(grid_rng.below(24));
  std::vector<int32_t> phonemes = {1, 4, 27, 2};
  Rng span_rng(derive_seed(seed, 0x57A));
  TrainExample ex = make_training_example(grid, phonemes, span_rng);

  std::vector<Tensor<double>*> params;
  visit_model_params(model, [&params](const std::string&, Tensor<double>& t) {
    params.push_back(&t);
  });
  auto make_loss = [&](Context<double>& ctx) {
    DecoderOutput<double> out = model_forward(ctx, model, ex);
    return weighted_nll(ctx, out.logits, ex, LossWeights::defaults(2)).loss;
  };
  Rng pick(derive_seed(seed, 0x9C));
  return grad_check(params, make_loss, 1e-5, per_param, &pick);
}

struct CheckOpts {
  std::string out_dir = "out";
  uint64_t seed = 0;
  int per_param = 6;
};

int cmd_grad_check(const CheckOpts& o) {
  write_provenance(o.out_dir, "grad-check", o.seed, nullptr);
  bool ok = true;
  for (Variant var : {Variant::mamba_xattn, Variant::transformer_xattn,
                      Variant::mamba_concat}) {
    GradCheckResult res = check_variant_gradients(
        var, o.seed, static_cast<size_t>(o.per_param));
    bool pass = res.max_rel_err < 1e-4;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " " << variant_name(var)
              << " max_rel_err=" << res.max_rel_err
              << " max_abs_err=" << res.max_abs_err << " checked=" << res.checked
              << "\n";
  }
  return ok ? 0 : 3;
}

bool selfcheck_roundtrip() {
  Rng rng(515);
  for (int rep = 0; rep < 50; ++rep) {
    int K = static_cast<int>(1 + rng.below(8));
    int64_t L = static_cast<int64_t>(1 + rng.below(200));
    CodecGrid g(L, K, 64);
    for (auto& t : g.tokens) t = static_cast<uint16_t>(rng.below(64));
    SpanMask spans = sample_spans(L, rng);
    RearrangedSequence seq = rearrange(g, spans);
    DelayedGrid delayed = apply_delay(seq);
    std::vector<uint16_t> undone = undo_delay(delayed);
    if (undone != seq.frames) return false;
    RearrangedSequence back = seq;
    back.frames = undone;
    CodecGrid restored = restore(back);
    if (restored.tokens != g.tokens || restored.length != g.length) return false;
  }
  return true;
}

bool selfcheck_gradient() {
  GradCheckResult res = check_variant_gradients(Variant::mamba_xattn, 1234, 4);
  return res.max_rel_err < 1e-4;
}

bool selfcheck_scan_step() {
  for (Variant var : {Variant::mamba_xattn, Variant::transformer_xattn,
                      Variant::mamba_concat}) {
    DecoderConfig dc = check_dec_cfg(var);
    Model<double> m = init_model<double>(dc, check_enc_cfg(), 99);
    Rng rng(7);
    int64_t rows = 8;
    std::vector<uint16_t> frames(static_cast<size_t>(rows) * dc.levels);
    for (auto& f : frames)
      f = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(dc.codebook_size)));
    std::vector<int32_t> phonemes = {3, 1, 27, 5};
    Context<double> ctx{nullptr, nullptr};
    Tensor<double> z;
    const Tensor<double>* zp = nullptr;
    const std::vector<int32_t>* pp = nullptr;
    if (m.has_encoder()) {
      z = encode_text(ctx, m.enc_cfg, m.enc, phonemes);
      zp = &z;
    } else {
      pp = &phonemes;
    }
    DecoderOutput<double> full =
        decoder_forward(ctx, dc, m.dec, frames.data(), rows, zp, pp);
    DecoderState<double> state;
    decoder_forward(ctx, dc, m.dec, frames.data(), 1, zp, pp, &state);
    for (int64_t t = 1; t < rows; ++t) {
      DecoderOutput<double> step =
          decoder_step(ctx, dc, m.dec, state, frames.data() + t * dc.levels);
      for (int k = 0; k < dc.levels; ++k)
        for (int64_t v = 0; v < dc.vocab(); ++v)
          if (std::fabs(step.logits[static_cast<size_t>(k)].at(0, v) -
                        full.logits[static_cast<size_t>(k)].at(t, v)) > 1e-8)
            return false;
    }
  }
  return true;
}

int cmd_selfcheck(const std::string& out_dir) {
  write_provenance(out_dir, "selfcheck", 0, nullptr);
  struct Suite {
    const char* name;
    bool (*fn)();
  };
  Suite suites[] = {{"roundtrip", selfcheck_roundtrip},
                    {"gradient", selfcheck_gradient},
                    {"scan-step", selfcheck_scan_step}};
  bool ok = true;
  for (const Suite& s : suites) {
    bool pass = s.fn();
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " " << s.name << "\n";
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) g_args.emplace_back(argv[i]);

  CLI::App app{"speech-token editing over a recurrent decoder with text cross-attention"};
  app.set_version_flag("--version", MAVE_VERSION);
  app.require_subcommand(1);

  GenDataOpts gd;
  auto* c_gd = app.add_subcommand("gen-data", "synthesize a token corpus with transcripts");
  c_gd->add_option("--out-dir", gd.out_dir, "output directory");
  c_gd->add_option("--seed", gd.seed, "rng seed")->required();
  c_gd->add_option("--utterances", gd.utterances, "number of utterances");
  c_gd->add_option("--levels", gd.levels, "token levels per frame");
  c_gd->add_option("--codebook", gd.codebook, "codebook size");
  c_gd->add_option("--speakers", gd.speakers, "speaker count");
  c_gd->add_option("--frames-per-phoneme", gd.frames_per_phoneme, "frames per phoneme");
  c_gd->add_option("--min-words", gd.min_words, "min words per utterance");
  c_gd->add_option("--max-words", gd.max_words, "max words per utterance");
  c_gd->add_option("--alphabet", gd.alphabet, "letters used for words");

  MakeEvalOpts me;
  auto* c_me = app.add_subcommand("make-eval", "derive a masked evaluation manifest");
  c_me->add_option("--manifest", me.manifest, "source manifest")->required();
  c_me->add_option("--mode", me.mode, "masking mode")
      ->required()
      ->check(CLI::IsMember({"words", "frames"}));
  c_me->add_option("--seed", me.seed, "rng seed")->required();
  c_me->add_option("--out-dir", me.out_dir, "output directory");
  c_me->add_option("--frames-per-phoneme", me.frames_per_phoneme,
                   "alignment used by word mode");
  c_me->add_option("--min-len", me.min_len, "min span frames (frame mode)");

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "train on a manifest of token grids");
  c_tr->add_option("--manifest", tr.manifest, "corpus manifest")->required();
  c_tr->add_option("--config", tr.config, "config file (overrides preset)");
  c_tr->add_option("--preset", tr.preset, "named base config");
  c_tr->add_option("--seed", tr.seed, "training seed")->required();
  c_tr->add_option("--out-dir", tr.out_dir, "output directory");
  c_tr->add_option("--phoneme-table", tr.phoneme_table, "grapheme->phoneme table file");
  c_tr->add_option("--steps", tr.steps, "override optimizer steps");
  c_tr->add_option("--batch-size", tr.batch, "override batch size");
  c_tr->add_option("--grad-accum", tr.grad_accum, "override grad accumulation");
  c_tr->add_option("--warmup", tr.warmup, "override warmup steps");
  c_tr->add_option("--log-every", tr.log_every, "override metrics cadence");
  c_tr->add_option("--ckpt-every", tr.ckpt_every, "override checkpoint cadence");
  c_tr->add_option("--eval-every", tr.eval_every, "override early-stop probe cadence");
  c_tr->add_option("--lr", tr.lr, "override learning rate");
  c_tr->add_option("--target-train-acc", tr.target_acc,
                   "override early-stop accuracy target");
  c_tr->add_option("--grad-clip", tr.grad_clip, "override gradient clip norm");

  GenOpts ed;
  auto* c_ed = app.add_subcommand("edit", "regenerate masked spans of a token grid");
  c_ed->add_option("--checkpoint", ed.checkpoint, "trained checkpoint")->required();
  c_ed->add_option("--config", ed.config, "config file (default: checkpoint sidecar)");
  c_ed->add_option("--grid", ed.grid, "input token grid")->required();
  c_ed->add_option("--spans", ed.spans, "spans start:len[,start:len...]")->required();
  c_ed->add_option("--text", ed.text, "target transcript")->required();
  c_ed->add_option("--seed", ed.seed, "sampling seed")->required();
  c_ed->add_option("--out-dir", ed.out_dir, "output directory");
  c_ed->add_option("--phoneme-table", ed.phoneme_table, "grapheme->phoneme table file");
  c_ed->add_option("--top-p", ed.top_p, "override nucleus mass");
  c_ed->add_option("--temperature", ed.temperature, "override sampling temperature");
  c_ed->add_option("--max-frames", ed.max_frames, "override per-span frame budget");

  GenOpts tt;
  auto* c_tt = app.add_subcommand("tts", "continue a reference prefix for new text");
  c_tt->add_option("--checkpoint", tt.checkpoint, "trained checkpoint")->required();
  c_tt->add_option("--config", tt.config, "config file (default: checkpoint sidecar)");
  c_tt->add_option("--ref-grid", tt.ref_grid, "reference token grid")->required();
  c_tt->add_option("--ref-text", tt.ref_text, "reference transcript")->required();
  c_tt->add_option("--text", tt.text, "text to continue with")->required();
  c_tt->add_option("--seed", tt.seed, "sampling seed")->required();
  c_tt->add_option("--out-dir", tt.out_dir, "output directory");
  c_tt->add_option("--phoneme-table", tt.phoneme_table, "grapheme->phoneme table file");
  c_tt->add_option("--top-p", tt.top_p, "override nucleus mass");
  c_tt->add_option("--temperature", tt.temperature, "override sampling temperature");
  c_tt->add_option("--max-frames", tt.max_frames, "override frame budget");

  BenchOpts be;
  auto* c_be = app.add_subcommand("bench", "measure generation cost vs predictions");
  c_be->add_option("--variants", be.variants, "decoder variants")->delimiter(',');
  c_be->add_option("--lx", be.lx, "text lengths")->delimiter(',');
  c_be->add_option("--ly", be.ly, "generated lengths (>=4 points)")->delimiter(',');
  c_be->add_option("--reps", be.reps, "repetitions (determinism cross-check)");
  c_be->add_option("--seed", be.seed, "init seed")->required();
  c_be->add_option("--config", be.config, "config file for model dims");
  c_be->add_option("--preset", be.preset, "named base config");
  c_be->add_option("--out", be.out, "report path (default <out-dir>/report.txt)");
  c_be->add_option("--out-dir", be.out_dir, "output directory");

  CheckOpts gc;
  auto* c_gc = app.add_subcommand("grad-check",
                                  "finite-difference gradients on toy models");
  c_gc->add_option("--seed", gc.seed, "probe seed")->required();
  c_gc->add_option("--out-dir", gc.out_dir, "output directory");
  c_gc->add_option("--per-param", gc.per_param, "coordinates probed per tensor");

  std::string sc_out = "out";
  auto* c_sc = app.add_subcommand("selfcheck",
                                  "round-trip, gradient and scan-step suites");
  c_sc->add_option("--out-dir", sc_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_gd->parsed()) return cmd_gen_data(gd);
    if (c_me->parsed()) return cmd_make_eval(me);
    if (c_tr->parsed()) return cmd_train(tr);
    if (c_ed->parsed()) return cmd_edit(ed);
    if (c_tt->parsed()) return cmd_tts(tt);
    if (c_be->parsed()) return cmd_bench(be);
    if (c_gc->parsed()) return cmd_grad_check(gc);
    if (c_sc->parsed()) return cmd_selfcheck(sc_out);
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
