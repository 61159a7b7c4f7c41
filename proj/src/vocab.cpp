#include "guiprobe/vocab.hpp"

#include <sstream>

#include "guiprobe/errors.hpp"

namespace guiprobe {

Vocabulary Vocabulary::standard() {
  std::vector<std::string> toks = {"<pad>", "<bos>", "<eos>"};
  for (int d = 0; d < 10; ++d) toks.push_back(std::string(1, static_cast<char>('0' + d)));
  toks.push_back("(");
  toks.push_back(")");
  toks.push_back(",");
  const char* words[] = {
      "click", "the",
      // colors
      "red", "green", "blue", "yellow", "orange", "purple", "pink", "cyan",
      "teal", "magenta", "lime", "brown", "navy", "olive",
      // shapes
      "box", "bar", "line", "block", "circle", "triangle", "cross", "plus",
      // kinds
      "widget", "text", "icon",
  };
  for (const char* w : words) toks.emplace_back(w);
  return from_tokens(std::move(toks));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
    auto [it, fresh] = v.ids_.emplace(v.tokens_[i], i);
    if (!fresh) throw DataError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
  }
  if (v.size() < 3 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<bos>" ||
      v.tokens_[2] != "<eos>") {
    throw DataError("vocabulary: specials must be <pad>, <bos>, <eos> at ids 0..2");
  }
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DataError("vocabulary: id out of range");
  return tokens_[id];
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw DataError("vocabulary: unknown token '" + token + "'");
  return it->second;
}

std::vector<int> Vocabulary::tokenize_words(const std::string& text) const {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(id(w));
  return out;
}

std::vector<int> Vocabulary::tokenize_chars(const std::string& s) const {
  std::vector<int> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(id(std::string(1, c)));
  return out;
}

std::string Vocabulary::chars_to_string(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    out += token(i);
  }
  return out;
}

std::string Vocabulary::words_to_string(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

}  // namespace guiprobe
