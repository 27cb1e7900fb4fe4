#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mave/sampler.hpp"
#include "mave/train.hpp"

using namespace mave;

namespace {

CodecGrid make_grid(int64_t L, int K, int S, uint64_t seed) {
  CodecGrid g(L, K, S);
  Rng rng(seed);
  for (auto& t : g.tokens) t = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(S)));
  return g;
}

Tensor<double> zeros(int64_t r, int64_t c) {
  Tensor<double> t(Shape{r, c});
  std::fill(t.mut(), t.mut() + t.numel(), 0.0);
  return t;
}

}  // namespace

TEST_CASE("level loss weights") {
  LossWeights w = LossWeights::defaults(8);
  REQUIRE(w.alpha.size() == 8);
  double sum = 0.0;
  for (int k = 0; k < 8; ++k) {
    CHECK(w.alpha[static_cast<size_t>(k)] == (k < 3 ? 0.25 : 0.05));
    sum += w.alpha[static_cast<size_t>(k)];
  }
  CHECK(std::fabs(sum - 1.0) < 1e-12);
  w.validate(8);
  CHECK_THROWS_AS(w.validate(7), data_error);
  LossWeights bad;
  bad.alpha = {0.1, 0.2};  // increasing
  CHECK_THROWS_AS(bad.validate(2), data_error);
  bad.alpha = {0.5, 0.0};
  CHECK_THROWS_AS(bad.validate(2), data_error);
}

TEST_CASE("training example layout matches the masking pipeline") {
  int K = 3, S = 64;
  CodecGrid grid = make_grid(40, K, S, 77);
  std::vector<int32_t> ph = {1, 2, 27, 3};
  SpecialVocab vocab{S};

  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng a(seed);
    TrainExample ex = make_training_example(grid, ph, a);

    // Re-derive the same pipeline with a fresh rng at the same seed.
    Rng b(seed);
    SpanMask spans = sample_spans(grid.length, b);
    RearrangedSequence seq = rearrange(grid, spans);
    DelayedGrid delayed = apply_delay(seq);

    REQUIRE(ex.rows == delayed.num_frames());
    REQUIRE(ex.levels == K);
    CHECK(ex.input == delayed.frames);
    CHECK(ex.phonemes == ph);

    int64_t total_span = 0;
    for (const auto& s : spans) total_span += s.length;
    int64_t span_cells = 0;
    for (int64_t t = 0; t < ex.rows; ++t) {
      for (int k = 0; k < K; ++k) {
        size_t idx = static_cast<size_t>(t) * K + k;
        if (t + 1 < ex.rows) {
          // Targets are the next delayed row.
          CHECK(ex.targets[idx] ==
                static_cast<int32_t>(ex.input[static_cast<size_t>(t + 1) * K + k]));
          int32_t tgt = ex.targets[idx];
          bool skip = tgt == vocab.bos() || tgt == vocab.pad() ||
                      vocab.mask_index(tgt) > 0;
          CHECK(ex.valid[idx] == (skip ? 0 : 1));
        } else {
          CHECK(ex.targets[idx] == vocab.pad());
          CHECK(ex.valid[idx] == 0);
        }
        if (ex.in_span[idx]) {
          CHECK(ex.valid[idx] == 1);  // span content is always scored
          ++span_cells;
        }
      }
    }
    // Every masked source frame feeds exactly K delayed target cells.
    CHECK(span_cells == total_span * K);
    if (spans.empty()) CHECK(span_cells == 0);
  }
}

TEST_CASE("weighted nll against closed forms") {
  // Hand-built example: 4 rows, 2 levels, all positions valid.
  int64_t V = 70;
  TrainExample ex;
  ex.rows = 4;
  ex.levels = 2;
  ex.targets = {5, 6, 7, 8, 9, 10, 11, 12};
  ex.valid.assign(8, 1);
  LossWeights w;
  w.alpha = {0.6, 0.4};
  Context<double> ctx{nullptr, nullptr};

  SUBCASE("uniform logits give log vocab size") {
    std::vector<Tensor<double>> logits = {zeros(4, V), zeros(4, V)};
    LossBreakdown<double> lb = weighted_nll(ctx, logits, ex, w);
    double lv = std::log(static_cast<double>(V));
    CHECK(std::fabs(lb.level_mean[0] - lv) < 1e-12);
    CHECK(std::fabs(lb.level_mean[1] - lv) < 1e-12);
    CHECK(lb.level_count[0] == 4);
    CHECK(lb.level_count[1] == 4);
    CHECK(std::fabs(lb.loss.at(0) - lv) < 1e-12);  // weights sum to 1
  }

  SUBCASE("confident correct logits give near-zero loss") {
    std::vector<Tensor<double>> logits = {zeros(4, V), zeros(4, V)};
    for (int k = 0; k < 2; ++k)
      for (int64_t t = 0; t < 4; ++t) {
        auto* p = logits[static_cast<size_t>(k)].mut();
        p[t * V + ex.targets[static_cast<size_t>(t) * 2 + k]] = 30.0;
      }
    LossBreakdown<double> lb = weighted_nll(ctx, logits, ex, w);
    CHECK(lb.loss.at(0) < 1e-3);
  }

  SUBCASE("invalid positions are excluded") {
    TrainExample masked = ex;
    for (int64_t t = 0; t < 4; ++t) {
      masked.valid[static_cast<size_t>(t) * 2 + 1] = 0;  // drop level 2 fully
      masked.targets[static_cast<size_t>(t) * 2 + 1] = 9999;  // poison would blow up
    }
    std::vector<Tensor<double>> logits = {zeros(4, V), zeros(4, V)};
    LossBreakdown<double> lb = weighted_nll(ctx, logits, masked, w);
    CHECK(lb.level_count[1] == 0);
    CHECK(lb.level_mean[1] == 0.0);
    double lv = std::log(static_cast<double>(V));
    CHECK(std::fabs(lb.loss.at(0) - 0.6 * lv) < 1e-12);
  }

  SUBCASE("degenerate batch throws") {
    TrainExample dead = ex;
    std::fill(dead.valid.begin(), dead.valid.end(), 0);
    std::vector<Tensor<double>> logits = {zeros(4, V), zeros(4, V)};
    CHECK_THROWS_AS((void)weighted_nll(ctx, logits, dead, w), data_error);
  }

  SUBCASE("row mismatch throws") {
    std::vector<Tensor<double>> logits = {zeros(3, V), zeros(4, V)};
    CHECK_THROWS_AS((void)weighted_nll(ctx, logits, ex, w), data_error);
  }
}

TEST_CASE("learning rate schedule") {
  TrainerConfig tc;
  tc.lr = 3e-3;
  tc.warmup_steps = 100;
  CHECK(std::fabs(tc.lr_at(0) - 3e-3 * (1.0 / 100.0)) < 1e-15);
  CHECK(std::fabs(tc.lr_at(49) - 3e-3 * 0.5) < 1e-15);
  CHECK(std::fabs(tc.lr_at(99) - 3e-3) < 1e-15);  // peak at end of warmup
  CHECK(std::fabs(tc.lr_at(399) - 3e-3 * 0.5) < 1e-15);  // sqrt(100/400)
  CHECK(tc.lr_at(500) < tc.lr_at(399));
}

TEST_CASE("adam step matches a hand computation") {
  Tensor<double> p(Shape{2});
  p.mut()[0] = 1.0;
  p.mut()[1] = -2.0;
  TrainerConfig tc;
  tc.beta1 = 0.9;
  tc.beta2 = 0.98;
  tc.adam_eps = 1e-9;
  Adam<double> opt(tc, {&p});
  std::vector<std::vector<double>> grads = {{0.5, -1.0}};

  double m0 = 0.1 * 0.5, v0 = 0.02 * 0.25;
  double upd0 = 0.1 * (m0 / 0.1) / (std::sqrt(v0 / 0.02) + 1e-9);
  double m1 = 0.1 * -1.0, v1 = 0.02 * 1.0;
  double upd1 = 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.02) + 1e-9);
  opt.step(grads, /*lr=*/0.1, /*clip_scale=*/1.0);
  CHECK(std::fabs(p.at(0) - (1.0 - upd0)) < 1e-15);
  CHECK(std::fabs(p.at(1) - (-2.0 - upd1)) < 1e-15);

  // Second step with the same gradient keeps bias-corrected ratios at
  // g/|g|, so the update magnitude stays ~lr.
  double before = p.at(0);
  opt.step(grads, 0.1, 1.0);
  CHECK(std::fabs((before - p.at(0)) - 0.1) < 1e-6);

  // clip_scale rescales the gradient before the moments.
  Tensor<double> q(Shape{1});
  q.mut()[0] = 0.0;
  Adam<double> opt2(tc, {&q});
  opt2.step({{4.0}}, 0.1, 0.25);  // effective grad 1.0
  double mm = 0.1 * 1.0, vv = 0.02 * 1.0;
  double expect = -0.1 * (mm / 0.1) / (std::sqrt(vv / 0.02) + 1e-9);
  CHECK(std::fabs(q.at(0) - expect) < 1e-15);
}

namespace {

DecoderConfig loop_cfg() {
  DecoderConfig c;
  c.variant = Variant::mamba_xattn;
  c.num_layers = 2;
  c.model_dim = 16;
  c.ssm_state_dim = 4;
  c.conv_width = 3;
  c.expand = 2;
  c.num_heads = 2;
  c.ffn_multiplier = 2;
  c.levels = 2;
  c.codebook_size = 16;
  c.phoneme_vocab = 28;
  return c;
}

std::vector<LoadedExample> loop_corpus() {
  std::vector<LoadedExample> corpus;
  for (int i = 0; i < 4; ++i) {
    LoadedExample le;
    le.grid = make_grid(10 + 2 * i, 2, 16, 1000 + static_cast<uint64_t>(i));
    le.phonemes = {1, 2, 3, static_cast<int32_t>(4 + i)};
    le.transcript = "synthetic";
    corpus.push_back(std::move(le));
  }
  return corpus;
}

}  // namespace

TEST_CASE("training loop runs, learns, and is reproducible") {
  EncoderConfig ec;
  ec.num_layers = 1;
  ec.model_dim = 16;
  ec.num_heads = 2;
  ec.ffn_multiplier = 2;
  auto corpus = loop_corpus();

  TrainerConfig tc;
  tc.lr = 5e-3;
  tc.warmup_steps = 5;
  tc.steps = 30;
  tc.batch_size = 2;
  tc.log_every = 10;
  tc.seed = 9;

  auto run = [&](const std::string& ckpt) {
    Model<float> m = init_model<float>(loop_cfg(), ec, 5);
    std::ostringstream metrics;
    TrainStats st = train_loop(m, corpus, tc, LossWeights::defaults(2), metrics, ckpt);
    return std::make_tuple(st, metrics.str(), m.dec.head_b[0]);
  };

  auto [st1, log1, bias1] = run("");
  CHECK(st1.steps_run == 30);
  CHECK(st1.stop_reason == "steps-exhausted");

  // First and last logged losses: training on 4 fixed examples must descend.
  double first_loss = -1.0, last_loss = -1.0;
  std::istringstream is(log1);
  std::string line;
  while (std::getline(is, line)) {
    auto pos = line.find("loss=");
    if (line.rfind("step=", 0) != 0 || pos == std::string::npos) continue;
    double v = std::stod(line.substr(pos + 5));
    if (first_loss < 0) first_loss = v;
    last_loss = v;
  }
  REQUIRE(first_loss > 0);
  CHECK(last_loss < first_loss);

  auto [st2, log2, bias2] = run("train_test.ckpt");
  CHECK(log1 == log2);  // bitwise-identical metrics across reruns
  for (int64_t i = 0; i < bias1.numel(); ++i) CHECK(bias1.at(i) == bias2.at(i));
  std::ifstream ck("train_test.ckpt", std::ios::binary);
  CHECK(ck.good());
  ck.close();
  std::remove("train_test.ckpt");

  Model<float> empty_target = init_model<float>(loop_cfg(), ec, 5);
  std::ostringstream sink;
  CHECK_THROWS_AS((void)train_loop(empty_target, std::vector<LoadedExample>{}, tc,
                                   LossWeights::defaults(2), sink, ""),
                  data_error);
}

TEST_CASE("masked accuracy is deterministic in the eval seed") {
  EncoderConfig ec;
  ec.num_layers = 1;
  ec.model_dim = 16;
  ec.num_heads = 2;
  ec.ffn_multiplier = 2;
  Model<float> m = init_model<float>(loop_cfg(), ec, 15);
  auto corpus = loop_corpus();
  AccuracyReport<float> a = masked_accuracy(m, corpus, 3);
  AccuracyReport<float> b = masked_accuracy(m, corpus, 3);
  CHECK(a.span_correct == b.span_correct);
  CHECK(a.span_total == b.span_total);
  CHECK(a.valid_correct == b.valid_correct);
  CHECK(a.valid_total == b.valid_total);
  CHECK(a.valid_total > 0);
  CHECK(a.valid_acc() >= 0.0);
  CHECK(a.valid_acc() <= 1.0);
}

TEST_CASE("nucleus sampling") {
  std::vector<double> logits = {std::log(0.5), std::log(0.3), std::log(0.2)};

  SUBCASE("softmax probabilities recover the distribution") {
    auto p = softmax_probs(logits.data(), 3, 1.0);
    CHECK(std::fabs(p[0] - 0.5) < 1e-12);
    CHECK(std::fabs(p[1] - 0.3) < 1e-12);
    CHECK(std::fabs(p[2] - 0.2) < 1e-12);
  }

  SUBCASE("minimal candidate set") {
    auto s75 = nucleus_set(logits.data(), 3, 0.75, 1.0);
    REQUIRE(s75.size() == 2);
    CHECK(s75[0] == 0);
    CHECK(s75[1] == 1);
    auto s50 = nucleus_set(logits.data(), 3, 0.5, 1.0);  // 0.5 alone reaches 0.5
    REQUIRE(s50.size() == 1);
    CHECK(s50[0] == 0);
    auto sall = nucleus_set(logits.data(), 3, 1.0, 1.0);
    CHECK(sall.size() == 3);
  }

  SUBCASE("ties prefer lower ids") {
    std::vector<double> flat(4, 0.0);
    auto s = nucleus_set(flat.data(), 4, 0.5, 1.0);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == 0);
    CHECK(s[1] == 1);
  }

  SUBCASE("samples come from the nucleus with matching frequencies") {
    GenerationParams gp;
    gp.top_p = 0.75;
    gp.temperature = 1.0;
    Rng rng(42);
    int n0 = 0, n1 = 0;
    for (int i = 0; i < 10000; ++i) {
      size_t pick = nucleus_sample(logits.data(), 3, gp, rng);
      REQUIRE(pick < 2);  // id 2 is outside the nucleus
      (pick == 0 ? n0 : n1)++;
    }
    CHECK(std::fabs(n0 / 10000.0 - 0.625) < 0.02);  // 0.5 / 0.8 renormalized
    CHECK(std::fabs(n1 / 10000.0 - 0.375) < 0.02);
  }

  SUBCASE("low temperature concentrates on the argmax") {
    GenerationParams gp;
    gp.top_p = 1.0;
    gp.temperature = 0.05;
    Rng rng(7);
    for (int i = 0; i < 200; ++i)
      CHECK(nucleus_sample(logits.data(), 3, gp, rng) == 0);
  }

  SUBCASE("parameter validation") {
    GenerationParams gp;
    gp.top_p = 0.0;
    CHECK_THROWS_AS(gp.validate(), data_error);
    gp.top_p = 1.1;
    CHECK_THROWS_AS(gp.validate(), data_error);
    gp = GenerationParams{};
    gp.temperature = 0.0;
    CHECK_THROWS_AS(gp.validate(), data_error);
    gp = GenerationParams{};
    gp.max_frames_per_span = 601;
    CHECK_THROWS_AS(gp.validate(), data_error);
    gp.max_frames_per_span = 0;
    CHECK_THROWS_AS(gp.validate(), data_error);
    Rng rng(1);
    CHECK_THROWS_AS((void)nucleus_sample(nullptr, 0, GenerationParams{}, rng),
                    data_error);
  }
}
