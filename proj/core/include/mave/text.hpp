#pragma once

// Transcript handling: table-driven phonemizer and a small bidirectional
// transformer encoder producing contextual phoneme embeddings for
// cross-attention.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mave/errors.hpp"
#include "mave/rng.hpp"
#include "mave/tensor.hpp"

namespace mave {

// ---------------------------------------------------------------------------
// Phonemizer
// ---------------------------------------------------------------------------

// Grapheme-to-phoneme table. Reserved ids: 0 is UNK; boundary_id (word
// separator) and vocab_size derive from the largest mapped id.
struct PhonemeTable {
  std::map<char, int32_t> to_id;
  int32_t unk_id = 0;
  int32_t boundary_id = 0;
  int32_t vocab_size = 0;
};

// Identity table: 'a'..'z' map to 1..26, boundary 27, vocab 28.
PhonemeTable default_phoneme_table();

// File format: lines of "grapheme<TAB>phoneme_id" (single-character
// graphemes, ids >= 1). UNK stays 0, boundary becomes max id + 1.
PhonemeTable load_phoneme_table(const std::string& path);

// Lowercase, collapse runs of whitespace to single spaces, trim.
std::string normalize_text(const std::string& text);

// Deterministic mapping; word boundaries become the boundary symbol; unknown
// characters map to UNK. Throws data_error on empty normalized text.
std::vector<int32_t> phonemize(const std::string& text, const PhonemeTable& table);

// ---------------------------------------------------------------------------
// Sinusoidal positions (shared with the decoder)
// ---------------------------------------------------------------------------

// Standard sin/cos position table, rows [first_pos, first_pos + count).
template <typename T>
Tensor<T> sinusoid_positions(int64_t count, int64_t dim, int64_t first_pos = 0) {
  Tensor<T> out(Shape{count, dim});
  T* p = out.mut();
  for (int64_t i = 0; i < count; ++i) {
    double pos = static_cast<double>(first_pos + i);
    for (int64_t j = 0; j < dim; j += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(dim));
      p[i * dim + j] = static_cast<T>(std::sin(pos * freq));
      if (j + 1 < dim) p[i * dim + j + 1] = static_cast<T>(std::cos(pos * freq));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderConfig {
  int num_layers = 4;
  int model_dim = 128;
  int num_heads = 4;
  int ffn_multiplier = 2;
  int max_positions = 4096;
  int phoneme_vocab = 28;  // P

  void validate() const {
    if (num_layers < 1 || model_dim < 1 || num_heads < 1 || ffn_multiplier < 1 ||
        max_positions < 1 || phoneme_vocab < 1)
      throw data_error("encoder config: all fields must be >= 1");
    if (model_dim % num_heads != 0)
      throw data_error("encoder config: model_dim not divisible by num_heads");
  }
};

template <typename T>
struct EncoderLayerParams {
  Tensor<T> wq, wk, wv, wo;      // [d,d]
  Tensor<T> attn_gain;           // [d]
  Tensor<T> w1, b1, w2, b2;      // FFN [d,f],[f],[f,d],[d]
  Tensor<T> ffn_gain;            // [d]
};

template <typename T>
struct EncoderParams {
  Tensor<T> embed;  // [P, d]
  std::vector<EncoderLayerParams<T>> layers;
};

template <typename T>
EncoderParams<T> init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  int64_t d = cfg.model_dim;
  int64_t f = static_cast<int64_t>(cfg.model_dim) * cfg.ffn_multiplier;
  auto randn = [&rng](Shape s, double std) {
    Tensor<T> t(std::move(s));
    T* p = t.mut();
    for (int64_t i = 0; i < t.numel(); ++i)
      p[i] = static_cast<T>(rng.normal() * std);
    return t;
  };
  auto ones = [](Shape s) {
    Tensor<T> t(std::move(s));
    T* p = t.mut();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = T(1);
    return t;
  };
  EncoderParams<T> params;
  params.embed = randn({cfg.phoneme_vocab, d}, 0.02);
  double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < cfg.num_layers; ++l) {
    EncoderLayerParams<T> lp;
    lp.wq = randn({d, d}, proj_std);
    lp.wk = randn({d, d}, proj_std);
    lp.wv = randn({d, d}, proj_std);
    lp.wo = randn({d, d}, proj_std);
    lp.attn_gain = ones({d});
    lp.w1 = randn({d, f}, proj_std);
    lp.b1 = Tensor<T>(Shape{f});
    lp.w2 = randn({f, d}, 1.0 / std::sqrt(static_cast<double>(f)));
    lp.b2 = Tensor<T>(Shape{d});
    lp.ffn_gain = ones({d});
    params.layers.push_back(std::move(lp));
  }
  return params;
}

// Enumerate parameters as (name, tensor) for checkpoints and the optimizer.
template <typename T, typename Fn>
void visit_encoder_params(EncoderParams<T>& p, Fn&& fn) {
  fn("enc.embed", p.embed);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    std::string pre = "enc.layer" + std::to_string(l) + ".";
    auto& lp = p.layers[l];
    fn(pre + "wq", lp.wq);
    fn(pre + "wk", lp.wk);
    fn(pre + "wv", lp.wv);
    fn(pre + "wo", lp.wo);
    fn(pre + "attn_gain", lp.attn_gain);
    fn(pre + "w1", lp.w1);
    fn(pre + "b1", lp.b1);
    fn(pre + "w2", lp.w2);
    fn(pre + "b2", lp.b2);
    fn(pre + "ffn_gain", lp.ffn_gain);
  }
}

// Bidirectional encoding: embedding + sinusoidal positions, then per layer
// self-attention -> residual -> rmsnorm -> FFN -> residual -> rmsnorm.
template <typename T>
Tensor<T> encode_text(Context<T>& ctx, const EncoderConfig& cfg,
                      EncoderParams<T>& params, const std::vector<int32_t>& phonemes,
                      std::vector<T>* last_attn_weights = nullptr) {
  cfg.validate();
  if (phonemes.empty()) throw data_error("encode_text: empty phoneme sequence");
  if (static_cast<int>(phonemes.size()) > cfg.max_positions)
    throw data_error("encode_text: sequence longer than max_positions");
  int64_t m = static_cast<int64_t>(phonemes.size());
  Tensor<T> x = embed_rows(ctx, params.embed, phonemes);
  x = add(ctx, x, sinusoid_positions<T>(m, cfg.model_dim));
  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto& lp = params.layers[l];
    Tensor<T> q = linear(ctx, x, lp.wq);
    Tensor<T> k = linear(ctx, x, lp.wk);
    Tensor<T> v = linear(ctx, x, lp.wv);
    std::vector<T>* wout =
        (last_attn_weights && l + 1 == params.layers.size()) ? last_attn_weights : nullptr;
    Tensor<T> a = attention(ctx, q, k, v, cfg.num_heads, /*causal=*/false, wout);
    a = linear(ctx, a, lp.wo);
    x = rmsnorm(ctx, add(ctx, x, a), lp.attn_gain);
    Tensor<T> h = silu(ctx, linear(ctx, x, lp.w1, lp.b1));
    h = linear(ctx, h, lp.w2, lp.b2);
    x = rmsnorm(ctx, add(ctx, x, h), lp.ffn_gain);
  }
  return x;
}

}  // namespace mave
