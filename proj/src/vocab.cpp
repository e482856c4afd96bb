#include "tim/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "tim/error.hpp"

namespace tim {

std::vector<std::string> Vocab::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& texts, size_t max_size) {
  if (max_size < 4) {
    throw ConfigError("vocab capacity must leave room for special tokens");
  }
  std::map<std::string, size_t> counts;
  for (const std::string& text : texts) {
    for (std::string& word : split_words(text)) ++counts[word];
  }
  std::vector<std::pair<std::string, size_t>> ranked(counts.begin(),
                                                     counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  const size_t capacity = max_size - 3;
  std::vector<std::string> words;
  words.reserve(std::min(capacity, ranked.size()));
  for (const auto& [word, count] : ranked) {
    if (words.size() == capacity) break;
    words.push_back(word);
  }
  return from_words(std::move(words));
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  Vocab v;
  v.words_ = std::move(words);
  for (size_t i = 0; i < v.words_.size(); ++i) {
    const auto [it, inserted] =
        v.index_.emplace(v.words_[i], static_cast<int>(i) + 3);
    if (!inserted) {
      throw ConfigError("duplicate word in vocabulary: " + v.words_[i]);
    }
  }
  return v;
}

int Vocab::word_id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  static const std::string eos = "<eos>";
  static const std::string sep = "<sep>";
  static const std::string unk = "<unk>";
  if (id == kEos) return eos;
  if (id == kSep) return sep;
  if (id == kUnk) return unk;
  const size_t idx = static_cast<size_t>(id) - 3;
  if (id < 0 || idx >= words_.size()) {
    throw ContractError("token id " + std::to_string(id) +
                        " outside vocabulary of size " +
                        std::to_string(size()));
  }
  return words_[idx];
}

std::vector<int> Vocab::encode_words(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(text)) ids.push_back(word_id(w));
  return ids;
}

std::vector<int> Vocab::encode_prompt(const std::string& text) const {
  std::vector<int> ids = encode_words(text);
  ids.push_back(kSep);
  return ids;
}

std::vector<int> Vocab::encode_output(const std::string& text) const {
  std::vector<int> ids = encode_words(text);
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (const int id : ids) {
    if (id == kEos) break;
    if (id == kSep) continue;
    if (!out.empty()) out.push_back(' ');
    // Ids beyond the word list (possible from an untrained model whose
    // vocabulary is larger than the corpus) decode as the unknown token.
    const size_t idx = static_cast<size_t>(id) - 3;
    if (id < 3 || idx >= words_.size()) {
      out += "<unk>";
    } else {
      out += words_[idx];
    }
  }
  return out;
}

}  // namespace tim
