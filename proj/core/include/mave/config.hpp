#pragma once

// Structured-text run configuration: named presets, "key = value" files with
// [model]/[encoder]/[trainer]/[generation] sections, deterministic formatting
// for provenance headers, and a stable digest.

#include <string>
#include <vector>

#include "mave/decoder.hpp"
#include "mave/sampler.hpp"
#include "mave/text.hpp"
#include "mave/train.hpp"

namespace mave {

struct FullConfig {
  std::string preset = "desk";  // base preset the config was derived from
  DecoderConfig dec;
  EncoderConfig enc;
  TrainerConfig trainer;
  GenerationParams gen;
  std::vector<double> level_weights;  // empty = default schedule for dec.levels

  LossWeights loss_weights() const;
  void validate() const;
};

// Known presets: desk / desk-transformer / desk-concat (small dims for CPU
// runs) and paper-830m / paper-830m-transformer / paper-830m-concat
// (full-scale reference dims, kept as named configs; training them is out of
// scope here).
std::vector<std::string> preset_names();
FullConfig preset_config(const std::string& name);

// Parse a config file body. An optional "preset = name" line before the first
// section selects the base; every later key overrides one field. Unknown
// sections or keys are errors.
FullConfig parse_config(const std::string& text);
FullConfig load_config(const std::string& path);

// Deterministic round-trippable rendering (parse_config(format_config(c))
// reproduces c) and its fnv1a-64 digest as 16 hex digits.
std::string format_config(const FullConfig& c);
std::string config_digest(const FullConfig& c);

}  // namespace mave
