#pragma once

// Bundles the decoder and (optional) text encoder into one trainable unit
// with checkpoint round-tripping.

#include <string>
#include <utility>
#include <vector>

#include "mave/checkpoint.hpp"
#include "mave/decoder.hpp"
#include "mave/text.hpp"

namespace mave {

template <typename T>
struct Model {
  DecoderConfig dec_cfg;
  EncoderConfig enc_cfg;
  DecoderParams<T> dec;
  EncoderParams<T> enc;  // unused by the concat variant

  bool has_encoder() const { return dec_cfg.uses_cross_attention(); }
};

template <typename T>
Model<T> init_model(const DecoderConfig& dcfg, const EncoderConfig& ecfg,
                    uint64_t seed) {
  dcfg.validate();
  Model<T> m;
  m.dec_cfg = dcfg;
  m.enc_cfg = ecfg;
  Rng rng(derive_seed(seed, 0x9A12));
  if (m.has_encoder()) {
    ecfg.validate();
    if (ecfg.model_dim != dcfg.model_dim)
      throw data_error("model: encoder dim must match decoder dim for cross-attention");
    m.enc = init_encoder_params<T>(ecfg, rng);
  }
  m.dec = init_decoder_params<T>(dcfg, rng);
  return m;
}

template <typename T, typename Fn>
void visit_model_params(Model<T>& m, Fn&& fn) {
  if (m.has_encoder()) visit_encoder_params(m.enc, fn);
  visit_decoder_params(m.dec_cfg, m.dec, fn);
}

template <typename T>
int64_t model_param_count(Model<T>& m) {
  int64_t total = 0;
  visit_model_params(m, [&total](const std::string&, Tensor<T>& t) { total += t.numel(); });
  return total;
}

template <typename T>
void save_model(const std::string& path, Model<T>& m) {
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  visit_model_params(m, [&tensors](const std::string& name, Tensor<T>& t) {
    tensors.emplace_back(name, &t);
  });
  save_checkpoint(path, tensors);
}

// Load parameter values into an already-shaped model (configs must match the
// checkpoint producer's).
template <typename T>
void load_model_params(const std::string& path, Model<T>& m) {
  auto loaded = load_checkpoint(path);
  std::vector<std::pair<std::string, Tensor<T>*>> tensors;
  visit_model_params(m, [&tensors](const std::string& name, Tensor<T>& t) {
    tensors.emplace_back(name, &t);
  });
  assign_from_checkpoint(loaded, tensors);
}

}  // namespace mave
