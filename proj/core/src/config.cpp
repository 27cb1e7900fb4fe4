#include "mave/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mave {

LossWeights FullConfig::loss_weights() const {
  if (level_weights.empty()) return LossWeights::defaults(dec.levels);
  LossWeights w;
  w.alpha = level_weights;
  w.validate(dec.levels);
  return w;
}

void FullConfig::validate() const {
  dec.validate();
  if (dec.uses_cross_attention()) {
    enc.validate();
    if (enc.model_dim != dec.model_dim)
      throw data_error("config: encoder and decoder model_dim must match");
  }
  trainer.validate();
  gen.validate();
  if (!level_weights.empty()) loss_weights();
}

std::vector<std::string> preset_names() {
  return {"desk",       "desk-transformer",       "desk-concat",
          "paper-830m", "paper-830m-transformer", "paper-830m-concat"};
}

FullConfig preset_config(const std::string& name) {
  FullConfig c;
  c.preset = name;
  // Desk base: small dims that train on a single CPU core. Deeper-narrower
  // beats 4x128 here: same budget, faster convergence on the alignment task.
  c.dec.variant = Variant::mamba_xattn;
  c.dec.num_layers = 6;
  c.dec.model_dim = 96;
  c.dec.ssm_state_dim = 16;
  c.dec.conv_width = 4;
  c.dec.expand = 2;
  c.dec.num_heads = 4;
  c.dec.ffn_multiplier = 4;
  c.dec.dt_rank = 0;
  c.dec.levels = 8;
  c.dec.codebook_size = 256;
  c.dec.max_positions = 8192;
  c.dec.phoneme_vocab = 28;
  c.enc.num_layers = 2;
  c.enc.model_dim = 96;
  c.enc.num_heads = 4;
  c.enc.ffn_multiplier = 2;
  c.enc.max_positions = 4096;
  c.enc.phoneme_vocab = 28;

  auto paper_dims = [&c](int enc_layers, int dec_layers, int dim) {
    c.dec.num_layers = dec_layers;
    c.dec.model_dim = dim;
    c.dec.num_heads = 16;
    c.dec.codebook_size = 1024;
    c.enc.num_layers = enc_layers;
    c.enc.model_dim = dim;
    c.enc.num_heads = 16;
    c.enc.ffn_multiplier = 4;
    c.enc.max_positions = 8192;
  };

  if (name == "desk") {
  } else if (name == "desk-transformer") {
    c.dec.variant = Variant::transformer_xattn;
  } else if (name == "desk-concat") {
    c.dec.variant = Variant::mamba_concat;
  } else if (name == "paper-830m") {
    paper_dims(4, 12, 1808);
  } else if (name == "paper-830m-transformer") {
    c.dec.variant = Variant::transformer_xattn;
    paper_dims(4, 12, 1840);
  } else if (name == "paper-830m-concat") {
    c.dec.variant = Variant::mamba_concat;
    paper_dims(4, 16, 2016);
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw data_error("config: unknown preset \"" + name + "\" (known: " + known + ")");
  }
  return c;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& v, const std::string& key) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw data_error("config: key \"" + key + "\": not an integer: \"" + v + "\"");
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw data_error("config: key \"" + key + "\": not a number: \"" + v + "\"");
  return out;
}

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), key));
  return out;
}

void apply_key(FullConfig& c, const std::string& section, const std::string& key,
               const std::string& value) {
  auto as_int = [&](auto& field) {
    field = static_cast<std::remove_reference_t<decltype(field)>>(parse_int(value, key));
  };
  if (section == "model") {
    if (key == "variant") c.dec.variant = parse_variant(value);
    else if (key == "num_layers") as_int(c.dec.num_layers);
    else if (key == "model_dim") as_int(c.dec.model_dim);
    else if (key == "ssm_state_dim") as_int(c.dec.ssm_state_dim);
    else if (key == "conv_width") as_int(c.dec.conv_width);
    else if (key == "expand") as_int(c.dec.expand);
    else if (key == "num_heads") as_int(c.dec.num_heads);
    else if (key == "ffn_multiplier") as_int(c.dec.ffn_multiplier);
    else if (key == "dt_rank") as_int(c.dec.dt_rank);
    else if (key == "levels") as_int(c.dec.levels);
    else if (key == "codebook_size") as_int(c.dec.codebook_size);
    else if (key == "max_positions") as_int(c.dec.max_positions);
    else if (key == "phoneme_vocab") as_int(c.dec.phoneme_vocab);
    else throw data_error("config: unknown key \"" + key + "\" in [model]");
  } else if (section == "encoder") {
    if (key == "num_layers") as_int(c.enc.num_layers);
    else if (key == "model_dim") as_int(c.enc.model_dim);
    else if (key == "num_heads") as_int(c.enc.num_heads);
    else if (key == "ffn_multiplier") as_int(c.enc.ffn_multiplier);
    else if (key == "max_positions") as_int(c.enc.max_positions);
    else if (key == "phoneme_vocab") as_int(c.enc.phoneme_vocab);
    else throw data_error("config: unknown key \"" + key + "\" in [encoder]");
  } else if (section == "trainer") {
    if (key == "lr") c.trainer.lr = parse_double(value, key);
    else if (key == "beta1") c.trainer.beta1 = parse_double(value, key);
    else if (key == "beta2") c.trainer.beta2 = parse_double(value, key);
    else if (key == "adam_eps") c.trainer.adam_eps = parse_double(value, key);
    else if (key == "warmup_steps") as_int(c.trainer.warmup_steps);
    else if (key == "steps") as_int(c.trainer.steps);
    else if (key == "batch_size") as_int(c.trainer.batch_size);
    else if (key == "grad_accum") as_int(c.trainer.grad_accum);
    else if (key == "grad_clip") c.trainer.grad_clip = parse_double(value, key);
    else if (key == "log_every") as_int(c.trainer.log_every);
    else if (key == "ckpt_every") as_int(c.trainer.ckpt_every);
    else if (key == "target_train_acc") c.trainer.target_train_acc = parse_double(value, key);
    else if (key == "eval_every") as_int(c.trainer.eval_every);
    else if (key == "level_weights") c.level_weights = parse_double_list(value, key);
    else throw data_error("config: unknown key \"" + key + "\" in [trainer]");
  } else if (section == "generation") {
    if (key == "top_p") c.gen.top_p = parse_double(value, key);
    else if (key == "temperature") c.gen.temperature = parse_double(value, key);
    else if (key == "max_frames_per_span") as_int(c.gen.max_frames_per_span);
    else throw data_error("config: unknown key \"" + key + "\" in [generation]");
  } else {
    throw data_error("config: unknown section [" + section + "]");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

FullConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  std::string line, section;
  FullConfig c = preset_config("desk");
  bool any_key = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw data_error("config: line " + std::to_string(lineno) +
                         ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw data_error("config: line " + std::to_string(lineno) +
                       ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw data_error("config: line " + std::to_string(lineno) +
                       ": empty key or value");
    if (section.empty()) {
      if (key == "preset") {
        if (any_key)
          throw data_error("config: preset must come before any other key");
        c = preset_config(value);
      } else {
        throw data_error("config: key \"" + key + "\" outside any section");
      }
    } else {
      apply_key(c, section, key, value);
    }
    any_key = true;
  }
  c.validate();
  return c;
}

FullConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("config: cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const FullConfig& c) {
  std::ostringstream os;
  os << "preset = " << c.preset << "\n";
  os << "[model]\n";
  os << "variant = " << variant_name(c.dec.variant) << "\n";
  os << "num_layers = " << c.dec.num_layers << "\n";
  os << "model_dim = " << c.dec.model_dim << "\n";
  os << "ssm_state_dim = " << c.dec.ssm_state_dim << "\n";
  os << "conv_width = " << c.dec.conv_width << "\n";
  os << "expand = " << c.dec.expand << "\n";
  os << "num_heads = " << c.dec.num_heads << "\n";
  os << "ffn_multiplier = " << c.dec.ffn_multiplier << "\n";
  os << "dt_rank = " << c.dec.dt_rank << "\n";
  os << "levels = " << c.dec.levels << "\n";
  os << "codebook_size = " << c.dec.codebook_size << "\n";
  os << "max_positions = " << c.dec.max_positions << "\n";
  os << "phoneme_vocab = " << c.dec.phoneme_vocab << "\n";
  os << "[encoder]\n";
  os << "num_layers = " << c.enc.num_layers << "\n";
  os << "model_dim = " << c.enc.model_dim << "\n";
  os << "num_heads = " << c.enc.num_heads << "\n";
  os << "ffn_multiplier = " << c.enc.ffn_multiplier << "\n";
  os << "max_positions = " << c.enc.max_positions << "\n";
  os << "phoneme_vocab = " << c.enc.phoneme_vocab << "\n";
  os << "[trainer]\n";
  os << "lr = " << fmt_double(c.trainer.lr) << "\n";
  os << "beta1 = " << fmt_double(c.trainer.beta1) << "\n";
  os << "beta2 = " << fmt_double(c.trainer.beta2) << "\n";
  os << "adam_eps = " << fmt_double(c.trainer.adam_eps) << "\n";
  os << "warmup_steps = " << c.trainer.warmup_steps << "\n";
  os << "steps = " << c.trainer.steps << "\n";
  os << "batch_size = " << c.trainer.batch_size << "\n";
  os << "grad_accum = " << c.trainer.grad_accum << "\n";
  os << "grad_clip = " << fmt_double(c.trainer.grad_clip) << "\n";
  os << "log_every = " << c.trainer.log_every << "\n";
  os << "ckpt_every = " << c.trainer.ckpt_every << "\n";
  os << "target_train_acc = " << fmt_double(c.trainer.target_train_acc) << "\n";
  os << "eval_every = " << c.trainer.eval_every << "\n";
  if (!c.level_weights.empty()) {
    os << "level_weights = ";
    for (size_t i = 0; i < c.level_weights.size(); ++i)
      os << (i ? "," : "") << fmt_double(c.level_weights[i]);
    os << "\n";
  }
  os << "[generation]\n";
  os << "top_p = " << fmt_double(c.gen.top_p) << "\n";
  os << "temperature = " << fmt_double(c.gen.temperature) << "\n";
  os << "max_frames_per_span = " << c.gen.max_frames_per_span << "\n";
  return os.str();
}

std::string config_digest(const FullConfig& c) {
  std::string text = format_config(c);
  uint64_t h = fnv1a64(text);
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 0; i < 16; ++i) buf[i] = hex[(h >> (60 - 4 * i)) & 0xf];
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace mave
