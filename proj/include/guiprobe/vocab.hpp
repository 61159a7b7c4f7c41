#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace guiprobe {

// Shared token set: coordinate digits and punctuation are first-class tokens,
// followed by the closed instruction word list.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  static Vocabulary standard();
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;
  bool has(const std::string& token) const {
    return ids_.count(token) != 0;
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int digit_id(int d) const { return id(std::string(1, static_cast<char>('0' + d))); }

  // "click the red circle icon" -> word ids
  std::vector<int> tokenize_words(const std::string& text) const;
  // "(012,345)" -> per-character ids
  std::vector<int> tokenize_chars(const std::string& s) const;
  // inverse of tokenize_chars; specials are skipped
  std::string chars_to_string(const std::vector<int>& ids) const;
  // inverse of tokenize_words
  std::string words_to_string(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace guiprobe
