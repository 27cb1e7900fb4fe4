#include "mave/codec.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mave {

CodecGrid::CodecGrid(int64_t L, int K, int S)
    : length(L), levels(K), codebook_size(S),
      tokens(static_cast<size_t>(L) * static_cast<size_t>(K), 0) {
  if (L < 1 || K < 1 || S < 1) throw data_error("codec grid: L, K, S must be >= 1");
}

void CodecGrid::validate() const {
  if (length < 1 || levels < 1 || codebook_size < 1)
    throw data_error("codec grid: L, K, S must be >= 1");
  if (tokens.size() != static_cast<size_t>(length) * static_cast<size_t>(levels))
    throw data_error("codec grid: token buffer is not L*K");
  for (uint16_t v : tokens)
    if (v >= codebook_size)
      throw data_error("codec grid: token " + std::to_string(v) +
                       " >= codebook size " + std::to_string(codebook_size));
}

void validate_spans(const SpanMask& spans, int64_t grid_length) {
  if (static_cast<int>(spans.size()) > SpecialVocab::kNumMask)
    throw data_error("spans: more than " + std::to_string(SpecialVocab::kNumMask) +
                     " spans");
  for (size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    if (s.length < 1 || s.length > 600)
      throw data_error("spans: length out of [1,600]");
    if (s.start < 0 || s.start + s.length > grid_length)
      throw data_error("spans: span outside the grid");
    if (i > 0 && spans[i - 1].start + spans[i - 1].length > s.start)
      throw data_error("spans: unsorted or overlapping");
  }
}

SpanMask sample_spans(int64_t grid_length, Rng& rng, int cap, int64_t max_len) {
  if (grid_length < 1) throw data_error("sample_spans: grid length must be >= 1");
  int m = std::min(rng.poisson1(), cap);
  // Free intervals [a, b) not yet claimed by a span.
  std::vector<std::pair<int64_t, int64_t>> free_iv = {{0, grid_length}};
  SpanMask out;
  for (int sp = 0; sp < m; ++sp) {
    int64_t longest = 0;
    for (auto& [a, b] : free_iv) longest = std::max(longest, b - a);
    if (longest == 0) break;  // no room left; drop remaining spans
    bool placed = false;
    for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
      int64_t len = rng.range(1, std::min<int64_t>(max_len, longest));
      // Count placements across free intervals.
      int64_t total = 0;
      for (auto& [a, b] : free_iv)
        if (b - a >= len) total += (b - a) - len + 1;
      if (total == 0) continue;  // retry with a fresh (shorter) length
      int64_t r = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
      for (size_t fi = 0; fi < free_iv.size(); ++fi) {
        auto [a, b] = free_iv[fi];
        if (b - a < len) continue;
        int64_t here = (b - a) - len + 1;
        if (r >= here) {
          r -= here;
          continue;
        }
        int64_t start = a + r;
        out.push_back({start, len});
        // Split the interval around the claimed span.
        free_iv.erase(free_iv.begin() + static_cast<ptrdiff_t>(fi));
        if (start > a) free_iv.push_back({a, start});
        if (start + len < b) free_iv.push_back({start + len, b});
        placed = true;
        break;
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Span& x, const Span& y) { return x.start < y.start; });
  validate_spans(out, grid_length);
  return out;
}

RearrangedSequence rearrange(const CodecGrid& grid, const SpanMask& spans) {
  validate_spans(spans, grid.length);
  SpecialVocab vocab{grid.codebook_size};
  int K = grid.levels;
  RearrangedSequence seq;
  seq.levels = K;
  seq.codebook_size = grid.codebook_size;
  seq.source_length = grid.length;
  auto push_uniform = [&](int id) {
    for (int k = 0; k < K; ++k) seq.frames.push_back(static_cast<uint16_t>(id));
  };
  auto push_row = [&](int64_t t) {
    for (int k = 0; k < K; ++k) seq.frames.push_back(grid.at(t, k));
  };

  push_uniform(vocab.bos());
  size_t next = 0;
  for (int64_t t = 0; t < grid.length;) {
    if (next < spans.size() && spans[next].start == t) {
      int mask_id = static_cast<int>(next) + 1;
      push_uniform(vocab.mask(mask_id));
      seq.spans.push_back({mask_id, spans[next].start, spans[next].length});
      t += spans[next].length;
      ++next;
    } else {
      push_row(t);
      ++t;
    }
  }
  for (const auto& info : seq.spans) {
    push_uniform(vocab.mask(info.mask_id));
    for (int64_t t = info.start; t < info.start + info.length; ++t) push_row(t);
    push_uniform(vocab.eos_span());
  }
  return seq;
}

CodecGrid restore(const RearrangedSequence& seq) {
  SpecialVocab vocab{seq.codebook_size};
  int K = seq.levels;
  int64_t T = seq.num_frames();
  if (T < 1 || seq.at(0, 0) != vocab.bos())
    throw data_error("restore: sequence does not start with BOS");

  // Walk the main section, noting placeholder order, until the first trigger
  // (a mask id we have already seen) or the end of the stream.
  std::vector<int> order;              // mask ids in placeholder order
  std::vector<size_t> placeholder_at;  // main-section output index per span
  std::vector<std::vector<uint16_t>> main_rows;
  int64_t t = 1;
  bool seen[SpecialVocab::kNumMask + 1] = {};
  for (; t < T; ++t) {
    int id0 = seq.at(t, 0);
    int mi = vocab.mask_index(id0);
    if (mi > 0) {
      if (seen[mi]) break;  // trailing blocks begin
      seen[mi] = true;
      order.push_back(mi);
      placeholder_at.push_back(main_rows.size());
      main_rows.emplace_back();  // empty row marks the splice point
    } else {
      std::vector<uint16_t> row(static_cast<size_t>(K));
      for (int k = 0; k < K; ++k) row[static_cast<size_t>(k)] = seq.at(t, k);
      main_rows.push_back(std::move(row));
    }
  }

  // Parse one trailing block per placeholder, in order.
  std::vector<std::vector<std::vector<uint16_t>>> contents(order.size());
  for (size_t si = 0; si < order.size(); ++si) {
    if (t >= T || vocab.mask_index(seq.at(t, 0)) != order[si])
      throw data_error("restore: missing trailing block for mask " +
                       std::to_string(order[si]));
    ++t;  // consume the trigger
    bool closed = false;
    for (; t < T; ++t) {
      if (seq.at(t, 0) == vocab.eos_span()) {
        ++t;
        closed = true;
        break;
      }
      std::vector<uint16_t> row(static_cast<size_t>(K));
      for (int k = 0; k < K; ++k) row[static_cast<size_t>(k)] = seq.at(t, k);
      contents[si].push_back(std::move(row));
    }
    if (!closed)
      throw data_error("restore: span for mask " + std::to_string(order[si]) +
                       " not closed by end-of-span");
  }
  if (t != T) throw data_error("restore: trailing garbage after span blocks");

  // Splice.
  std::vector<std::vector<uint16_t>> rows;
  size_t si = 0;
  for (size_t i = 0; i < main_rows.size(); ++i) {
    if (si < placeholder_at.size() && placeholder_at[si] == i) {
      for (auto& r : contents[si]) rows.push_back(std::move(r));
      ++si;
    } else {
      rows.push_back(std::move(main_rows[i]));
    }
  }
  if (rows.empty()) throw data_error("restore: empty result grid");
  CodecGrid g(static_cast<int64_t>(rows.size()), K, seq.codebook_size);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int k = 0; k < K; ++k) g.set(static_cast<int64_t>(i), k, rows[i][static_cast<size_t>(k)]);
  g.validate();
  return g;
}

DelayedGrid apply_delay(const std::vector<uint16_t>& frames, int64_t num_frames,
                        int levels, int codebook_size) {
  SpecialVocab vocab{codebook_size};
  DelayedGrid d;
  d.levels = levels;
  d.codebook_size = codebook_size;
  int64_t out_len = num_frames + levels - 1;
  d.frames.assign(static_cast<size_t>(out_len) * levels,
                  static_cast<uint16_t>(vocab.pad()));
  for (int64_t tp = 0; tp < out_len; ++tp)
    for (int k = 0; k < levels; ++k) {
      int64_t src = tp - k;
      if (src >= 0 && src < num_frames)
        d.frames[static_cast<size_t>(tp) * levels + k] =
            frames[static_cast<size_t>(src) * levels + k];
    }
  return d;
}

std::vector<uint16_t> undo_delay(const DelayedGrid& d) {
  SpecialVocab vocab{d.codebook_size};
  int K = d.levels;
  int64_t out_len = d.num_frames();
  int64_t L = out_len - (K - 1);
  if (L < 1) throw data_error("undo_delay: grid shorter than the delay triangle");
  std::vector<uint16_t> frames(static_cast<size_t>(L) * K);
  for (int64_t tp = 0; tp < out_len; ++tp)
    for (int k = 0; k < K; ++k) {
      int64_t src = tp - k;
      uint16_t v = d.at(tp, k);
      if (src >= 0 && src < L) {
        frames[static_cast<size_t>(src) * K + k] = v;
      } else if (v != vocab.pad()) {
        throw data_error("undo_delay: non-pad token in the delay triangle at frame " +
                         std::to_string(tp) + " level " + std::to_string(k));
      }
    }
  return frames;
}

EditPrompt build_edit_prompt(const CodecGrid& grid, const SpanMask& spans) {
  RearrangedSequence seq = rearrange(grid, spans);
  SpecialVocab vocab{grid.codebook_size};
  EditPrompt p;
  p.levels = seq.levels;
  p.codebook_size = seq.codebook_size;
  p.plan = seq.spans;
  p.layout = seq;
  if (seq.spans.empty()) {
    p.prompt_frames = seq.frames;  // nothing to generate
    return p;
  }
  // Truncate immediately after the first trailing trigger: that trigger is
  // the second occurrence of the first span's mask id at level 0.
  int first_mask = vocab.mask(seq.spans.front().mask_id);
  int hits = 0;
  for (int64_t t = 0; t < seq.num_frames(); ++t) {
    if (seq.at(t, 0) == first_mask) ++hits;
    if (hits == 2) {
      p.prompt_frames.assign(seq.frames.begin(),
                             seq.frames.begin() + (t + 1) * seq.levels);
      return p;
    }
  }
  throw data_error("build_edit_prompt: trigger not found");
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {

void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16le(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32le(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw io_error(std::string("token file: truncated reading ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16le(std::istream& is, const char* what) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw io_error(std::string("token file: truncated reading ") + what);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

constexpr char kTokenMagic[8] = {'M', 'A', 'V', 'E', 'T', 'O', 'K', '1'};

}  // namespace

CodecGrid TokenFile::to_codec_grid() const {
  CodecGrid g(length, levels, codebook_size);
  g.tokens = tokens;
  g.validate();
  return g;
}

void save_tokens(const std::string& path, const TokenFile& tf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("token file: cannot open for write: " + path);
  os.write(kTokenMagic, 8);
  put_u32le(os, static_cast<uint32_t>(tf.length));
  put_u16le(os, static_cast<uint16_t>(tf.levels));
  put_u32le(os, static_cast<uint32_t>(tf.codebook_size));
  for (uint16_t v : tf.tokens) put_u16le(os, v);
  if (!os) throw io_error("token file: write failed: " + path);
}

void save_tokens(const std::string& path, const CodecGrid& g) {
  TokenFile tf;
  tf.length = g.length;
  tf.levels = g.levels;
  tf.codebook_size = g.codebook_size;
  tf.tokens = g.tokens;
  save_tokens(path, tf);
}

TokenFile load_tokens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("token file: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kTokenMagic, 8) != 0)
    throw io_error("token file: bad magic: " + path);
  TokenFile tf;
  tf.length = get_u32le(is, "length");
  tf.levels = get_u16le(is, "levels");
  tf.codebook_size = get_u32le(is, "codebook size");
  if (tf.length < 1 || tf.levels < 1 || tf.codebook_size < 1)
    throw io_error("token file: bad header: " + path);
  SpecialVocab vocab{tf.codebook_size};
  size_t n = static_cast<size_t>(tf.length) * static_cast<size_t>(tf.levels);
  tf.tokens.resize(n);
  for (size_t i = 0; i < n; ++i) {
    tf.tokens[i] = get_u16le(is, "tokens");
    if (tf.tokens[i] >= vocab.extended_size())
      throw data_error("token file: id beyond extended vocab: " + path);
  }
  return tf;
}

SpanMask parse_spans(const std::string& text) {
  SpanMask out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw data_error("spans: expected start:len, got \"" + item + "\"");
    try {
      size_t used1 = 0, used2 = 0;
      int64_t start = std::stoll(item.substr(0, colon), &used1);
      int64_t len = std::stoll(item.substr(colon + 1), &used2);
      if (used1 != colon || used2 != item.size() - colon - 1)
        throw data_error("spans: trailing characters in \"" + item + "\"");
      out.push_back({start, len});
    } catch (const std::invalid_argument&) {
      throw data_error("spans: not a number in \"" + item + "\"");
    } catch (const std::out_of_range&) {
      throw data_error("spans: number out of range in \"" + item + "\"");
    }
  }
  return out;
}

std::string format_spans(const SpanMask& spans) {
  std::string out;
  for (size_t i = 0; i < spans.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(spans[i].start) + ':' + std::to_string(spans[i].length);
  }
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("manifest: cannot open: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    size_t tab1 = line.find('\t');
    if (tab1 == std::string::npos)
      throw data_error("manifest: line " + std::to_string(lineno) +
                       ": expected at least 2 tab-separated fields");
    e.grid_path = line.substr(0, tab1);
    size_t tab2 = line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) {
      e.transcript = line.substr(tab1 + 1);
    } else {
      e.transcript = line.substr(tab1 + 1, tab2 - tab1 - 1);
      e.spans = parse_spans(line.substr(tab2 + 1));
      e.has_spans = true;
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw io_error("manifest: cannot open for write: " + path);
  for (const auto& e : entries) {
    os << e.grid_path << '\t' << e.transcript;
    if (e.has_spans) os << '\t' << format_spans(e.spans);
    os << '\n';
  }
  if (!os) throw io_error("manifest: write failed: " + path);
}

}  // namespace mave
