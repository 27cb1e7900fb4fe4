#pragma once

// Hybrid autoregressive decoder over delayed token frames: stacked selective
// state-space blocks with per-block cross-attention onto the text encoding,
// per-level output heads, and two ablation variants (causal transformer with
// cross-attention; state-space decoder with concatenated text prefix).
//
// One code path serves training (full sequence, no state), prefill (full
// sequence, state captured) and generation (single-row sequence, state
// carried), because the scan/conv/attention primitives all accept an
// optional incoming state.

#include <cstdint>
#include <string>
#include <vector>

#include "mave/codec.hpp"
#include "mave/errors.hpp"
#include "mave/rng.hpp"
#include "mave/tensor.hpp"
#include "mave/text.hpp"

namespace mave {

enum class Variant { mamba_xattn, transformer_xattn, mamba_concat };

inline Variant parse_variant(const std::string& s) {
  if (s == "mamba_xattn") return Variant::mamba_xattn;
  if (s == "transformer_xattn") return Variant::transformer_xattn;
  if (s == "mamba_concat") return Variant::mamba_concat;
  throw data_error("unknown variant: " + s);
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::mamba_xattn: return "mamba_xattn";
    case Variant::transformer_xattn: return "transformer_xattn";
    case Variant::mamba_concat: return "mamba_concat";
  }
  return "?";
}

struct DecoderConfig {
  Variant variant = Variant::mamba_xattn;
  int num_layers = 4;
  int model_dim = 128;      // d
  int ssm_state_dim = 16;   // n
  int conv_width = 4;
  int expand = 2;
  int num_heads = 4;        // attention paths (cross and/or self)
  int ffn_multiplier = 4;   // transformer variant FFN
  int dt_rank = 0;          // 0 = auto (model_dim / 16, at least 1)
  int levels = 8;           // K
  int codebook_size = 1024; // S
  int max_positions = 8192;
  int phoneme_vocab = 28;   // used by the concat variant's text prefix

  int vocab() const { return codebook_size + 6; }  // V = S + 6 specials
  int d_inner() const { return model_dim * expand; }
  int dt_rank_eff() const {
    return dt_rank > 0 ? dt_rank : std::max(1, model_dim / 16);
  }
  bool uses_cross_attention() const { return variant != Variant::mamba_concat; }
  bool is_mamba() const { return variant != Variant::transformer_xattn; }

  void validate() const {
    if (num_layers < 1 || model_dim < 1 || ssm_state_dim < 1 || conv_width < 1 ||
        expand < 1 || num_heads < 1 || ffn_multiplier < 1 || levels < 1 ||
        codebook_size < 1 || max_positions < 1 || phoneme_vocab < 1)
      throw data_error("decoder config: all fields must be >= 1");
    if (model_dim % num_heads != 0)
      throw data_error("decoder config: model_dim not divisible by num_heads");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderLayerParams {
  // State-space block (mamba variants).
  Tensor<T> m_gain;                    // [d] pre-norm gain
  Tensor<T> w_main, w_gate;            // [d, di]
  Tensor<T> conv_kernel, conv_bias;    // [di, w], [di]
  Tensor<T> w_bproj, w_cproj;          // [di, n]
  Tensor<T> w_dt1, w_dt2, dt_bias;     // [di, r], [r, di], [di]
  Tensor<T> a_log;                     // [di, n]; state matrix A = -exp(a_log)
  Tensor<T> w_out;                     // [di, d]
  // Causal self-attention + FFN (transformer variant).
  Tensor<T> s_gain, sq, sk, sv, so;    // [d], [d,d] x4
  Tensor<T> f_gain, f_w1, f_b1, f_w2, f_b2;
  // Cross-attention sublayer (both xattn variants).
  Tensor<T> xq, xk, xv, xo, x_gain;    // [d,d] x4, [d]
};

template <typename T>
struct DecoderParams {
  std::vector<Tensor<T>> level_embed;  // K tensors [V, d]
  std::vector<Tensor<T>> head_w;       // K tensors [d, V]
  std::vector<Tensor<T>> head_b;       // K tensors [V]
  Tensor<T> phon_embed;                // [P, d]   (concat variant only)
  Tensor<T> sep_embed;                 // [1, d]   (concat variant only)
  std::vector<DecoderLayerParams<T>> layers;
};

template <typename T>
DecoderParams<T> init_decoder_params(const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  int64_t d = cfg.model_dim, di = cfg.d_inner(), n = cfg.ssm_state_dim;
  int64_t w = cfg.conv_width, r = cfg.dt_rank_eff(), v = cfg.vocab();
  int64_t f = static_cast<int64_t>(d) * cfg.ffn_multiplier;
  auto randn = [&rng](Shape s, double std) {
    Tensor<T> t(std::move(s));
    T* p = t.mut();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal() * std);
    return t;
  };
  auto ones = [](Shape s) {
    Tensor<T> t(std::move(s));
    T* p = t.mut();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = T(1);
    return t;
  };
  double dstd = 1.0 / std::sqrt(static_cast<double>(d));
  double distd = 1.0 / std::sqrt(static_cast<double>(di));

  DecoderParams<T> params;
  for (int k = 0; k < cfg.levels; ++k) {
    params.level_embed.push_back(randn({v, d}, 0.02));
    params.head_w.push_back(randn({d, v}, dstd));
    params.head_b.push_back(Tensor<T>(Shape{v}));
  }
  if (cfg.variant == Variant::mamba_concat) {
    params.phon_embed = randn({cfg.phoneme_vocab, d}, 0.02);
    params.sep_embed = randn({1, d}, 0.02);
  }
  for (int l = 0; l < cfg.num_layers; ++l) {
    DecoderLayerParams<T> lp;
    if (cfg.is_mamba()) {
      lp.m_gain = ones({d});
      lp.w_main = randn({d, di}, dstd);
      lp.w_gate = randn({d, di}, dstd);
      lp.conv_kernel = randn({di, w}, 1.0 / std::sqrt(static_cast<double>(w)));
      lp.conv_bias = Tensor<T>(Shape{di});
      lp.w_bproj = randn({di, n}, distd);
      lp.w_cproj = randn({di, n}, distd);
      lp.w_dt1 = randn({di, r}, distd);
      lp.w_dt2 = randn({r, di}, 1.0 / std::sqrt(static_cast<double>(r)));
      // Bias chosen so softplus(bias) lands log-uniformly in [1e-3, 1e-1],
      // the usual step-size init for selective scans.
      lp.dt_bias = Tensor<T>(Shape{di});
      for (int64_t i = 0; i < di; ++i) {
        double u = std::exp(rng.uniform() * (std::log(0.1) - std::log(0.001)) +
                            std::log(0.001));
        lp.dt_bias.mut()[i] = static_cast<T>(std::log(std::expm1(u)));
      }
      // A[i,j] = -(j+1) at init.
      lp.a_log = Tensor<T>(Shape{di, n});
      for (int64_t i = 0; i < di; ++i)
        for (int64_t j = 0; j < n; ++j)
          lp.a_log.mut()[i * n + j] = static_cast<T>(std::log(static_cast<double>(j + 1)));
      lp.w_out = randn({di, d}, distd);
    } else {
      lp.s_gain = ones({d});
      lp.sq = randn({d, d}, dstd);
      lp.sk = randn({d, d}, dstd);
      lp.sv = randn({d, d}, dstd);
      lp.so = randn({d, d}, dstd);
      lp.f_gain = ones({d});
      lp.f_w1 = randn({d, f}, dstd);
      lp.f_b1 = Tensor<T>(Shape{f});
      lp.f_w2 = randn({f, d}, 1.0 / std::sqrt(static_cast<double>(f)));
      lp.f_b2 = Tensor<T>(Shape{d});
    }
    if (cfg.uses_cross_attention()) {
      lp.xq = randn({d, d}, dstd);
      lp.xk = randn({d, d}, dstd);
      lp.xv = randn({d, d}, dstd);
      lp.xo = randn({d, d}, dstd);
      lp.x_gain = ones({d});
    }
    params.layers.push_back(std::move(lp));
  }
  return params;
}

template <typename T, typename Fn>
void visit_decoder_params(const DecoderConfig& cfg, DecoderParams<T>& p, Fn&& fn) {
  for (size_t k = 0; k < p.level_embed.size(); ++k) {
    fn("dec.embed" + std::to_string(k), p.level_embed[k]);
    fn("dec.head" + std::to_string(k) + ".w", p.head_w[k]);
    fn("dec.head" + std::to_string(k) + ".b", p.head_b[k]);
  }
  if (cfg.variant == Variant::mamba_concat) {
    fn("dec.phon_embed", p.phon_embed);
    fn("dec.sep_embed", p.sep_embed);
  }
  for (size_t l = 0; l < p.layers.size(); ++l) {
    std::string pre = "dec.layer" + std::to_string(l) + ".";
    auto& lp = p.layers[l];
    if (cfg.is_mamba()) {
      fn(pre + "m_gain", lp.m_gain);
      fn(pre + "w_main", lp.w_main);
      fn(pre + "w_gate", lp.w_gate);
      fn(pre + "conv_kernel", lp.conv_kernel);
      fn(pre + "conv_bias", lp.conv_bias);
      fn(pre + "w_bproj", lp.w_bproj);
      fn(pre + "w_cproj", lp.w_cproj);
      fn(pre + "w_dt1", lp.w_dt1);
      fn(pre + "w_dt2", lp.w_dt2);
      fn(pre + "dt_bias", lp.dt_bias);
      fn(pre + "a_log", lp.a_log);
      fn(pre + "w_out", lp.w_out);
    } else {
      fn(pre + "s_gain", lp.s_gain);
      fn(pre + "sq", lp.sq);
      fn(pre + "sk", lp.sk);
      fn(pre + "sv", lp.sv);
      fn(pre + "so", lp.so);
      fn(pre + "f_gain", lp.f_gain);
      fn(pre + "f_w1", lp.f_w1);
      fn(pre + "f_b1", lp.f_b1);
      fn(pre + "f_w2", lp.f_w2);
      fn(pre + "f_b2", lp.f_b2);
    }
    if (cfg.uses_cross_attention()) {
      fn(pre + "xq", lp.xq);
      fn(pre + "xk", lp.xk);
      fn(pre + "xv", lp.xv);
      fn(pre + "xo", lp.xo);
      fn(pre + "x_gain", lp.x_gain);
    }
  }
}

template <typename T>
int64_t count_decoder_params(const DecoderConfig& cfg, DecoderParams<T>& p) {
  int64_t total = 0;
  visit_decoder_params(cfg, p, [&total](const std::string&, Tensor<T>& t) {
    total += t.numel();
  });
  return total;
}

template <typename T>
int64_t count_encoder_params(EncoderParams<T>& p) {
  int64_t total = 0;
  visit_encoder_params(p, [&total](const std::string&, Tensor<T>& t) {
    total += t.numel();
  });
  return total;
}

// ---------------------------------------------------------------------------
// Generation state
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderState {
  struct MambaLayer {
    std::vector<T> ssm;        // [di * n]
    std::vector<T> conv_tail;  // [(w-1) * di], oldest row first
  };
  struct AttnLayer {
    Tensor<T> k, v;  // growing [t, d] caches (transformer variant)
  };
  std::vector<MambaLayer> mamba;
  std::vector<AttnLayer> self_kv;
  std::vector<Tensor<T>> xattn_k, xattn_v;  // per layer [M, d], fixed
  int64_t pos = 0;       // absolute position of the next row
  bool primed = false;   // text prefix already consumed (concat variant)

  // Per-request recurrent state: SSM states, conv tails and (transformer)
  // self-attention caches. Grows with generated length only via self_kv.
  size_t state_bytes() const {
    size_t b = 0;
    for (const auto& l : mamba)
      b += (l.ssm.size() + l.conv_tail.size()) * sizeof(T);
    for (const auto& l : self_kv) {
      if (l.k.defined()) b += static_cast<size_t>(l.k.numel()) * sizeof(T);
      if (l.v.defined()) b += static_cast<size_t>(l.v.numel()) * sizeof(T);
    }
    return b;
  }
  // Fixed text-conditioning cache: linear in the phoneme count only.
  size_t text_cache_bytes() const {
    size_t b = 0;
    for (const auto& t : xattn_k)
      if (t.defined()) b += static_cast<size_t>(t.numel()) * sizeof(T);
    for (const auto& t : xattn_v)
      if (t.defined()) b += static_cast<size_t>(t.numel()) * sizeof(T);
    return b;
  }
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderOutput {
  std::vector<Tensor<T>> logits;  // K tensors [frame rows, V]
};

namespace decoder_detail {

// Embed delayed frames [count x K] as rows: sum of per-level embeddings plus
// sinusoidal positions starting at first_pos.
template <typename T>
Tensor<T> embed_frames(Context<T>& ctx, const DecoderConfig& cfg,
                       DecoderParams<T>& params, const uint16_t* frames,
                       int64_t count, int64_t first_pos) {
  int64_t k_levels = cfg.levels;
  std::vector<int32_t> ids(static_cast<size_t>(count));
  Tensor<T> x;
  for (int k = 0; k < k_levels; ++k) {
    for (int64_t t = 0; t < count; ++t) {
      uint16_t id = frames[t * k_levels + k];
      if (id >= cfg.vocab())
        throw data_error("embed_frames: id " + std::to_string(id) +
                         " outside extended vocab " + std::to_string(cfg.vocab()));
      ids[static_cast<size_t>(t)] = id;
    }
    Tensor<T> e = embed_rows(ctx, params.level_embed[static_cast<size_t>(k)], ids);
    x = (k == 0) ? e : add(ctx, x, e);
  }
  return add(ctx, x, sinusoid_positions<T>(count, cfg.model_dim, first_pos));
}

template <typename T>
void update_conv_tail(std::vector<T>& tail, const Tensor<T>& rows, int64_t di,
                      int64_t w) {
  if (w <= 1) return;
  int64_t keep = w - 1;
  std::vector<T> next(static_cast<size_t>(keep * di));
  int64_t t_new = rows.dim(0);
  for (int64_t i = 0; i < keep; ++i) {
    // Row (t_new - keep + i) of the new rows, or a shifted old-tail row.
    int64_t src = t_new - keep + i;
    if (src >= 0) {
      std::copy(rows.ptr() + src * di, rows.ptr() + (src + 1) * di,
                next.data() + i * di);
    } else if (tail.empty()) {
      // No history yet: the conv left-pads with zeros, so the tail does too.
      std::fill(next.data() + i * di, next.data() + (i + 1) * di, T(0));
    } else {
      int64_t old_row = src + keep;  // shift within the old tail
      std::copy(tail.data() + old_row * di, tail.data() + (old_row + 1) * di,
                next.data() + i * di);
    }
  }
  tail = std::move(next);
}

// Selective-SSM block body (pre-norm, residual outside).
template <typename T>
Tensor<T> mamba_core(Context<T>& ctx, const DecoderConfig& cfg,
                     DecoderLayerParams<T>& lp, const Tensor<T>& x,
                     typename DecoderState<T>::MambaLayer* state) {
  int64_t di = cfg.d_inner(), w = cfg.conv_width;
  Tensor<T> nx = rmsnorm(ctx, x, lp.m_gain);
  Tensor<T> main = matmul(ctx, nx, lp.w_main);
  Tensor<T> gate = matmul(ctx, nx, lp.w_gate);
  const std::vector<T>* tail =
      (state && !state->conv_tail.empty()) ? &state->conv_tail : nullptr;
  Tensor<T> c = silu(ctx, causal_conv1d(ctx, main, lp.conv_kernel, lp.conv_bias, tail));
  if (state) update_conv_tail(state->conv_tail, main, di, w);
  Tensor<T> delta = softplus(
      ctx, add_rowvec(ctx, matmul(ctx, matmul(ctx, c, lp.w_dt1), lp.w_dt2), lp.dt_bias));
  Tensor<T> b_in = matmul(ctx, c, lp.w_bproj);
  Tensor<T> c_in = matmul(ctx, c, lp.w_cproj);
  Tensor<T> a_neg = scale(ctx, mave::exp(ctx, lp.a_log), T(-1));
  const std::vector<T>* s0 = (state && !state->ssm.empty()) ? &state->ssm : nullptr;
  ScanResult<T> scan = selective_scan(ctx, c, delta, b_in, c_in, a_neg, s0);
  if (state) state->ssm = std::move(scan.final_state);
  Tensor<T> gated = mul(ctx, scan.y, silu(ctx, gate));
  return matmul(ctx, gated, lp.w_out);
}

// Cross-attention sublayer: residual add then rmsnorm. Keys/values come from
// the text encoding (or its cached projections during generation).
template <typename T>
Tensor<T> cross_attention(Context<T>& ctx, const DecoderConfig& cfg,
                          DecoderLayerParams<T>& lp, const Tensor<T>& x,
                          const Tensor<T>& kc, const Tensor<T>& vc,
                          std::vector<T>* weights_out = nullptr) {
  Tensor<T> q = matmul(ctx, x, lp.xq);
  Tensor<T> a = attention(ctx, q, kc, vc, cfg.num_heads, /*causal=*/false, weights_out);
  a = matmul(ctx, a, lp.xo);
  return rmsnorm(ctx, add(ctx, x, a), lp.x_gain);
}

// Causal self-attention sublayer with optional KV cache (pre-norm, residual
// inside).
template <typename T>
Tensor<T> self_attention(Context<T>& ctx, const DecoderConfig& cfg,
                         DecoderLayerParams<T>& lp, const Tensor<T>& x,
                         typename DecoderState<T>::AttnLayer* cache) {
  Tensor<T> nx = rmsnorm(ctx, x, lp.s_gain);
  Tensor<T> q = matmul(ctx, nx, lp.sq);
  Tensor<T> k = matmul(ctx, nx, lp.sk);
  Tensor<T> v = matmul(ctx, nx, lp.sv);
  Tensor<T> k_full = k, v_full = v;
  if (cache && cache->k.defined()) {
    k_full = concat_rows(ctx, cache->k, k);
    v_full = concat_rows(ctx, cache->v, v);
  }
  if (cache) {
    cache->k = k_full;
    cache->v = v_full;
  }
  Tensor<T> a = attention(ctx, q, k_full, v_full, cfg.num_heads, /*causal=*/true);
  return add(ctx, x, matmul(ctx, a, lp.so));
}

template <typename T>
Tensor<T> ffn(Context<T>& ctx, DecoderLayerParams<T>& lp, const Tensor<T>& x) {
  Tensor<T> nx = rmsnorm(ctx, x, lp.f_gain);
  Tensor<T> h = silu(ctx, linear(ctx, nx, lp.f_w1, lp.f_b1));
  return add(ctx, x, linear(ctx, h, lp.f_w2, lp.f_b2));
}

}  // namespace decoder_detail

// Full decoder pass over `count` delayed frames.
//  - xattn variants: text_encoding must be provided in stateless mode; in
//    stateful mode (prefill/step) its per-layer K/V projections are cached on
//    the first call and reused afterwards.
//  - concat variant: phonemes are embedded and prepended (with a separator
//    row) on the first call of a stateful run or on every stateless call.
//  - Logits cover exactly the frame rows; row t predicts frame t+1.
template <typename T>
DecoderOutput<T> decoder_forward(Context<T>& ctx, const DecoderConfig& cfg,
                                 DecoderParams<T>& params, const uint16_t* frames,
                                 int64_t count, const Tensor<T>* text_encoding,
                                 const std::vector<int32_t>* phonemes,
                                 DecoderState<T>* state = nullptr) {
  cfg.validate();
  if (count < 1) throw data_error("decoder_forward: need at least one frame");
  int64_t d = cfg.model_dim;
  int64_t first_pos = state ? state->pos : 0;

  // Assemble the input rows.
  int64_t prefix_rows = 0;
  Tensor<T> x;
  bool want_prefix =
      cfg.variant == Variant::mamba_concat && (!state || !state->primed);
  if (want_prefix) {
    if (!phonemes || phonemes->empty())
      throw data_error("decoder_forward: concat variant needs phonemes");
    Tensor<T> ptext = embed_rows(ctx, params.phon_embed, *phonemes);
    Tensor<T> psep = slice_rows(ctx, params.sep_embed, 0, 1);
    Tensor<T> prefix = concat_rows(ctx, ptext, psep);
    prefix_rows = prefix.dim(0);
    prefix = add(ctx, prefix, sinusoid_positions<T>(prefix_rows, d, first_pos));
    Tensor<T> fr = decoder_detail::embed_frames(ctx, cfg, params, frames, count,
                                                first_pos + prefix_rows);
    x = concat_rows(ctx, prefix, fr);
  } else {
    x = decoder_detail::embed_frames(ctx, cfg, params, frames, count, first_pos);
  }
  int64_t rows = x.dim(0);
  if (first_pos + rows > cfg.max_positions)
    throw data_error("decoder_forward: exceeded max_positions");

  // Cross-attention K/V: cached on the state, or projected fresh per layer.
  bool use_xattn = cfg.uses_cross_attention();
  bool have_cached_kv = state && !state->xattn_k.empty();
  if (use_xattn && !have_cached_kv && !text_encoding)
    throw data_error("decoder_forward: this variant needs a text encoding");
  if (state && state->mamba.empty() && cfg.is_mamba())
    state->mamba.resize(static_cast<size_t>(cfg.num_layers));
  if (state && state->self_kv.empty() && !cfg.is_mamba())
    state->self_kv.resize(static_cast<size_t>(cfg.num_layers));

  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto& lp = params.layers[l];
    if (cfg.is_mamba()) {
      auto* ms = state ? &state->mamba[l] : nullptr;
      x = add(ctx, x, decoder_detail::mamba_core(ctx, cfg, lp, x, ms));
    } else {
      auto* cc = state ? &state->self_kv[l] : nullptr;
      x = decoder_detail::self_attention(ctx, cfg, lp, x, cc);
    }
    if (use_xattn) {
      Tensor<T> kc, vc;
      if (have_cached_kv) {
        kc = state->xattn_k[l];
        vc = state->xattn_v[l];
      } else {
        kc = matmul(ctx, *text_encoding, lp.xk);
        vc = matmul(ctx, *text_encoding, lp.xv);
        if (state) {
          state->xattn_k.push_back(kc);
          state->xattn_v.push_back(vc);
        }
      }
      x = decoder_detail::cross_attention(ctx, cfg, lp, x, kc, vc);
    }
    if (!cfg.is_mamba()) x = decoder_detail::ffn(ctx, lp, x);
  }

  if (state) {
    state->pos = first_pos + rows;
    state->primed = true;
  }

  // Heads over the frame rows only.
  Tensor<T> h = prefix_rows > 0 ? slice_rows(ctx, x, prefix_rows, rows) : x;
  DecoderOutput<T> out;
  for (int k = 0; k < cfg.levels; ++k)
    out.logits.push_back(linear(ctx, h, params.head_w[static_cast<size_t>(k)],
                                params.head_b[static_cast<size_t>(k)]));
  return out;
}

// Run the prompt through the decoder once, capturing all recurrent state and
// caching the text K/V projections.
template <typename T>
DecoderState<T> prefill(Context<T>& ctx, const DecoderConfig& cfg,
                        DecoderParams<T>& params, const uint16_t* frames,
                        int64_t count, const Tensor<T>* text_encoding,
                        const std::vector<int32_t>* phonemes) {
  DecoderState<T> state;
  decoder_forward(ctx, cfg, params, frames, count, text_encoding, phonemes, &state);
  return state;
}

// One generation step: feed a single frame, get next-frame logits per level.
template <typename T>
DecoderOutput<T> decoder_step(Context<T>& ctx, const DecoderConfig& cfg,
                              DecoderParams<T>& params, DecoderState<T>& state,
                              const uint16_t* frame) {
  return decoder_forward<T>(ctx, cfg, params, frame, 1, nullptr, nullptr, &state);
}

}  // namespace mave
