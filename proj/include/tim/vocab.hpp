#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tim {

// Whitespace word-level vocabulary. Ids 0..2 are reserved: end-of-sequence,
// the prompt/output separator, and the unknown-word token. Construction is
// deterministic: words ordered by descending frequency, ties broken
// lexicographically, truncated to the requested capacity.
class Vocab {
 public:
  static constexpr int kEos = 0;
  static constexpr int kSep = 1;
  static constexpr int kUnk = 2;

  Vocab() = default;

  static Vocab build(const std::vector<std::string>& texts, size_t max_size);
  static Vocab from_words(std::vector<std::string> words);

  static std::vector<std::string> split_words(const std::string& text);

  size_t size() const { return words_.size() + 3; }

  int word_id(const std::string& word) const;
  const std::string& word(int id) const;

  // Word ids only; no special tokens appended.
  std::vector<int> encode_words(const std::string& text) const;
  // Prompt tokens: words followed by the separator token.
  std::vector<int> encode_prompt(const std::string& text) const;
  // Output tokens: words followed by end-of-sequence.
  std::vector<int> encode_output(const std::string& text) const;

  // Joins word tokens with single spaces, stopping at end-of-sequence.
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;  // id = index + 3
  std::unordered_map<std::string, int> index_;
};

}  // namespace tim
