#include "mave/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace mave {

PhonemeTable default_phoneme_table() {
  PhonemeTable t;
  for (int i = 0; i < 26; ++i)
    t.to_id[static_cast<char>('a' + i)] = i + 1;
  t.boundary_id = 27;
  t.vocab_size = 28;
  return t;
}

PhonemeTable load_phoneme_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("phoneme table: cannot open: " + path);
  PhonemeTable t;
  std::string line;
  int lineno = 0;
  int32_t max_id = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw data_error("phoneme table: line " + std::to_string(lineno) +
                       ": expected grapheme<TAB>id");
    std::string grapheme = line.substr(0, tab);
    if (grapheme.size() != 1)
      throw data_error("phoneme table: line " + std::to_string(lineno) +
                       ": grapheme must be a single character");
    int32_t id;
    try {
      id = static_cast<int32_t>(std::stol(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw data_error("phoneme table: line " + std::to_string(lineno) + ": bad id");
    }
    if (id < 1)
      throw data_error("phoneme table: line " + std::to_string(lineno) +
                       ": ids must be >= 1 (0 is reserved for UNK)");
    t.to_id[grapheme[0]] = id;
    max_id = std::max(max_id, id);
  }
  if (t.to_id.empty()) throw data_error("phoneme table: no entries: " + path);
  t.boundary_id = max_id + 1;
  t.vocab_size = max_id + 2;
  return t;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  bool in_space = true;  // also trims leading whitespace
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<int32_t> phonemize(const std::string& text, const PhonemeTable& table) {
  std::string norm = normalize_text(text);
  if (norm.empty()) throw data_error("phonemize: empty text after normalization");
  std::vector<int32_t> out;
  for (char c : norm) {
    if (c == ' ') {
      out.push_back(table.boundary_id);
    } else {
      auto it = table.to_id.find(c);
      out.push_back(it == table.to_id.end() ? table.unk_id : it->second);
    }
  }
  return out;
}

}  // namespace mave
