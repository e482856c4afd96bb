#include "tim/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tim/error.hpp"
#include "tim/vocab.hpp"

namespace tim {

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string replace_all(std::string text, const std::string& key,
                        const std::string& value) {
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

std::string fill_instruction_template(const std::string& instruction_template,
                                      const std::string& src_lang,
                                      const std::string& tgt_lang) {
  if (instruction_template.find("{src}") == std::string::npos ||
      instruction_template.find("{tgt}") == std::string::npos) {
    throw TemplateError(
        "instruction template must contain {src} and {tgt} placeholders: " +
        instruction_template);
  }
  std::string out = replace_all(instruction_template, "{src}", src_lang);
  return replace_all(out, "{tgt}", tgt_lang);
}

}  // namespace

const char* InstructionRecord::kind_name(Kind kind) {
  switch (kind) {
    case Kind::plain:
      return "plain";
    case Kind::order_guided:
      return "order_guided";
    case Kind::dict_guided:
      return "dict_guided";
    case Kind::error_guided:
      return "error_guided";
  }
  return "plain";
}

InstructionRecord::Kind InstructionRecord::parse_kind(const std::string& name) {
  if (name == "plain") return Kind::plain;
  if (name == "order_guided") return Kind::order_guided;
  if (name == "dict_guided") return Kind::dict_guided;
  if (name == "error_guided") return Kind::error_guided;
  throw SchemaError("unknown record kind: " + name);
}

const std::set<std::string>* BilingualLexicon::lookup(
    const std::string& src_word) const {
  const auto it = entries.find(to_lower(src_word));
  return it == entries.end() ? nullptr : &it->second;
}

void BilingualLexicon::add(const std::string& src_word,
                           const std::string& tgt_word) {
  if (src_word.empty() || tgt_word.empty()) {
    throw DataError("lexicon entries must not contain empty words");
  }
  entries[to_lower(src_word)].insert(tgt_word);
}

void SyntheticTaskSpec::validate() const {
  if (corpus_size == 0) throw ConfigError("corpus_size must be positive");
  if (min_len == 0 || max_len < min_len) {
    throw ConfigError("sentence length range is invalid");
  }
  if (src_vocab.empty()) throw ConfigError("source vocabulary is empty");
  // The lexicon must be a bijection over the source vocabulary.
  std::set<std::string> images;
  for (const std::string& word : src_vocab) {
    const auto it = lexicon.find(word);
    if (it == lexicon.end()) {
      throw ConfigError("lexicon misses source word: " + word);
    }
    if (!images.insert(it->second).second) {
      throw ConfigError("lexicon is not a bijection; duplicate target " +
                        it->second);
    }
  }
  if (alt_lexicon.has_value()) {
    std::set<std::string> alt_images;
    for (const std::string& word : src_vocab) {
      const auto it = alt_lexicon->find(word);
      if (it == alt_lexicon->end()) {
        throw ConfigError("alt lexicon misses source word: " + word);
      }
      if (!alt_images.insert(it->second).second) {
        throw ConfigError("alt lexicon is not a bijection; duplicate target " +
                          it->second);
      }
    }
  }
}

SyntheticTaskSpec SyntheticTaskSpec::standard(size_t vocab_words,
                                              size_t corpus_size,
                                              uint64_t seed,
                                              bool with_alt_reference) {
  SyntheticTaskSpec spec;
  spec.corpus_size = corpus_size;
  spec.seed = seed;
  char buf[16];
  for (size_t i = 0; i < vocab_words; ++i) {
    std::snprintf(buf, sizeof(buf), "s%03zu", i);
    spec.src_vocab.emplace_back(buf);
    std::snprintf(buf, sizeof(buf), "t%03zu", i);
    spec.tgt_vocab.emplace_back(buf);
    spec.lexicon[spec.src_vocab.back()] = spec.tgt_vocab.back();
  }
  if (with_alt_reference) {
    std::map<std::string, std::string> alt;
    for (size_t i = 0; i < vocab_words; ++i) {
      std::snprintf(buf, sizeof(buf), "a%03zu", i);
      alt[spec.src_vocab[i]] = buf;
      spec.tgt_vocab.emplace_back(buf);
    }
    spec.alt_lexicon = std::move(alt);
  }
  return spec;
}

InstructionRecord make_plain(const std::string& src_text,
                             const std::string& tgt_text,
                             const std::string& instruction_template,
                             const std::string& src_lang,
                             const std::string& tgt_lang) {
  if (src_text.empty() || tgt_text.empty()) {
    throw DataError("plain record requires nonempty source and target");
  }
  InstructionRecord record;
  record.kind = InstructionRecord::Kind::plain;
  record.instruction =
      fill_instruction_template(instruction_template, src_lang, tgt_lang);
  record.input = src_text;
  record.output = tgt_text;
  record.src_lang = src_lang;
  record.tgt_lang = tgt_lang;
  return record;
}

InstructionRecord make_order_guided(const InstructionRecord& record) {
  InstructionRecord out = record;
  std::vector<std::string> words = Vocab::split_words(record.output);
  std::reverse(words.begin(), words.end());
  out.output = join_words(words);
  out.note = kReverseOrderNote;
  out.kind = InstructionRecord::Kind::order_guided;
  return out;
}

std::vector<InstructionRecord> make_dictionary_guided(
    const std::string& src_text, const std::vector<std::string>& references,
    const BilingualLexicon& lexicon, const std::string& instruction_template,
    const std::string& src_lang, const std::string& tgt_lang,
    size_t min_word_len) {
  if (references.empty()) {
    throw DataError("dictionary-guided records require at least one reference");
  }
  const std::vector<std::string> src_words = Vocab::split_words(src_text);
  std::vector<InstructionRecord> records;
  records.reserve(references.size());
  for (const std::string& reference : references) {
    const std::vector<std::string> ref_words = Vocab::split_words(reference);
    const std::set<std::string> ref_set(ref_words.begin(), ref_words.end());
    std::vector<std::string> pairs;
    std::set<std::string> seen_src;
    for (const std::string& word : src_words) {
      if (word.size() < min_word_len) continue;
      if (!seen_src.insert(to_lower(word)).second) continue;
      const std::set<std::string>* targets = lexicon.lookup(word);
      if (targets == nullptr) continue;
      for (const std::string& target : *targets) {
        if (ref_set.count(target)) {
          pairs.push_back(word + " -> " + target);
        }
      }
    }
    InstructionRecord record;
    record.kind = InstructionRecord::Kind::dict_guided;
    record.instruction =
        fill_instruction_template(instruction_template, src_lang, tgt_lang);
    record.input = src_text;
    record.output = reference;
    record.src_lang = src_lang;
    record.tgt_lang = tgt_lang;
    if (!pairs.empty()) {
      std::string note = "Word alignments: ";
      for (size_t i = 0; i < pairs.size(); ++i) {
        if (i) note += " ; ";
        note += pairs[i];
      }
      record.note = note;
    }
    records.push_back(std::move(record));
  }
  return records;
}

InstructionRecord make_error_guided(const MqmRecord& mqm,
                                    const std::string& instruction_template,
                                    const std::string& src_lang,
                                    const std::string& tgt_lang) {
  if (mqm.severity.empty()) {
    throw DataError("MQM record has empty severity");
  }
  if (mqm.source.empty() || mqm.target.empty()) {
    throw DataError("MQM record requires nonempty source and target");
  }
  InstructionRecord record;
  record.kind = InstructionRecord::Kind::error_guided;
  record.instruction =
      fill_instruction_template(instruction_template, src_lang, tgt_lang);
  record.input = mqm.source;
  record.output = mqm.target;
  record.src_lang = src_lang;
  record.tgt_lang = tgt_lang;
  if (mqm.severity == "No-error" || mqm.severity == "no-error") {
    record.note = kNoErrorNote;
  } else if (mqm.category.empty()) {
    record.note = "This translation contains a " + mqm.severity + " error.";
  } else {
    record.note = "This translation contains a " + mqm.severity + " " +
                  mqm.category + " error.";
  }
  return record;
}

std::string make_noisy_bad(const std::string& output, Rng& rng) {
  std::vector<std::string> words = Vocab::split_words(output);
  if (words.empty()) {
    throw DataError("cannot corrupt an empty output");
  }
  if (words.size() == 1) {
    // Degenerate input: duplicate the single word.
    return words[0] + " " + words[0];
  }
  const size_t n = words.size();
  for (int attempt = 0; attempt < 8; ++attempt) {
    std::vector<std::string> candidate;
    if (rng.next_double() < 0.5) {
      // Deletion: drop each word with probability 0.15, keeping the result
      // nonempty and strictly shorter.
      std::vector<bool> keep(n, true);
      size_t dropped = 0;
      for (size_t i = 0; i < n; ++i) {
        if (rng.next_double() < 0.15) {
          keep[i] = false;
          ++dropped;
        }
      }
      if (dropped == 0) keep[rng.next_below(n)] = false;
      if (dropped == n) keep[rng.next_below(n)] = true;
      for (size_t i = 0; i < n; ++i) {
        if (keep[i]) candidate.push_back(words[i]);
      }
    } else {
      // Swap two distinct positions.
      candidate = words;
      const size_t i = rng.next_below(n);
      size_t j = rng.next_below(n - 1);
      if (j >= i) ++j;
      std::swap(candidate[i], candidate[j]);
    }
    std::string text = join_words(candidate);
    if (text != output) return text;
  }
  // Forced adjacent swap of the first differing neighbor pair.
  for (size_t i = 0; i + 1 < n; ++i) {
    if (words[i] != words[i + 1]) {
      std::vector<std::string> candidate = words;
      std::swap(candidate[i], candidate[i + 1]);
      return join_words(candidate);
    }
  }
  // Every word is identical; duplication is the only remaining corruption.
  return join_words(words) + " " + words[0];
}

std::vector<ParallelExample> gen_synthetic_corpus(
    const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<ParallelExample> corpus;
  corpus.reserve(spec.corpus_size);
  for (size_t i = 0; i < spec.corpus_size; ++i) {
    const size_t len =
        spec.min_len + rng.next_below(spec.max_len - spec.min_len + 1);
    std::vector<std::string> src_words(len);
    std::vector<std::string> ref_words(len);
    std::vector<std::string> alt_words(len);
    for (size_t j = 0; j < len; ++j) {
      const std::string& w =
          spec.src_vocab[rng.next_below(spec.src_vocab.size())];
      src_words[j] = w;
      ref_words[j] = spec.lexicon.at(w);
      if (spec.alt_lexicon) alt_words[j] = spec.alt_lexicon->at(w);
    }
    ParallelExample example;
    example.source = join_words(src_words);
    example.reference = join_words(ref_words);
    if (spec.alt_lexicon) example.alt_reference = join_words(alt_words);
    corpus.push_back(std::move(example));
  }
  return corpus;
}

std::string render_prompt(const InstructionRecord& record) {
  std::string prompt = record.instruction;
  if (!prompt.empty() && prompt.back() != '\n') prompt.push_back('\n');
  if (record.note.has_value() && !record.note->empty()) {
    prompt += "Note: " + *record.note + "\n";
  }
  prompt += record.input;
  return prompt;
}

BilingualLexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon file: " + path);
  BilingualLexicon lexicon;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> fields = Vocab::split_words(line);
    if (fields.size() != 2) {
      throw ParseError("lexicon line " + std::to_string(line_number) +
                       ": expected 'source target', got " +
                       std::to_string(fields.size()) + " fields");
    }
    lexicon.add(fields[0], fields[1]);
  }
  return lexicon;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (const char c : line) {
    if (c == '\t') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(field);
  return fields;
}

}  // namespace

std::vector<MqmRecord> load_mqm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open MQM file: " + path);
  std::string header;
  if (!std::getline(in, header)) {
    throw SchemaError("MQM file is empty: " + path);
  }
  const std::vector<std::string> columns = split_tabs(header);
  std::map<std::string, size_t> column_index;
  for (size_t i = 0; i < columns.size(); ++i) column_index[columns[i]] = i;
  if (!column_index.count("severity")) {
    throw SchemaError("MQM file lacks a 'severity' column: " + path);
  }
  const auto field = [&](const std::vector<std::string>& fields,
                         const char* name) -> std::string {
    const auto it = column_index.find(name);
    if (it == column_index.end() || it->second >= fields.size()) return "";
    return fields[it->second];
  };
  std::vector<MqmRecord> records;
  std::string line;
  size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_tabs(line);
    if (fields.size() != columns.size()) {
      throw ParseError("MQM line " + std::to_string(line_number) + ": has " +
                       std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(columns.size()));
    }
    MqmRecord record;
    record.system = field(fields, "system");
    record.seg_id = field(fields, "seg_id");
    record.source = field(fields, "source");
    record.target = field(fields, "target");
    record.severity = fields[column_index["severity"]];
    record.category = field(fields, "category");
    if (record.severity.empty()) {
      throw ParseError("MQM line " + std::to_string(line_number) +
                       ": empty severity");
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::string record_to_json_line(const InstructionRecord& record) {
  nlohmann::json j;
  j["kind"] = InstructionRecord::kind_name(record.kind);
  j["instruction"] = record.instruction;
  j["input"] = record.input;
  j["output"] = record.output;
  j["bad_output"] =
      record.bad_output.has_value() ? nlohmann::json(*record.bad_output)
                                    : nlohmann::json(nullptr);
  j["note"] = record.note.has_value() ? nlohmann::json(*record.note)
                                      : nlohmann::json(nullptr);
  j["src_lang"] = record.src_lang;
  j["tgt_lang"] = record.tgt_lang;
  return j.dump();
}

InstructionRecord record_from_json_line(const std::string& line,
                                        size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("line " + std::to_string(line_number) +
                     ": invalid JSON: " + e.what());
  }
  static const std::set<std::string> known_keys = {
      "kind",   "instruction", "input",    "output",
      "bad_output", "note",    "src_lang", "tgt_lang"};
  for (const auto& [key, value] : j.items()) {
    if (!known_keys.count(key)) {
      throw SchemaError("line " + std::to_string(line_number) +
                        ": unknown key '" + key + "'");
    }
  }
  const auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) {
      throw SchemaError("line " + std::to_string(line_number) +
                        ": missing or non-string field '" + key + "'");
    }
    return j[key].get<std::string>();
  };
  InstructionRecord record;
  record.kind = InstructionRecord::parse_kind(require_string("kind"));
  record.instruction = require_string("instruction");
  record.input = require_string("input");
  record.output = require_string("output");
  record.src_lang = require_string("src_lang");
  record.tgt_lang = require_string("tgt_lang");
  const auto optional_string =
      [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) {
      throw SchemaError("line " + std::to_string(line_number) + ": field '" +
                        key + "' must be a string or null");
    }
    return j[key].get<std::string>();
  };
  record.bad_output = optional_string("bad_output");
  record.note = optional_string("note");
  if (record.bad_output.has_value() && *record.bad_output == record.output) {
    throw SchemaError("line " + std::to_string(line_number) +
                      ": bad_output equals output");
  }
  return record;
}

void write_jsonl(const std::string& path,
                 const std::vector<InstructionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const InstructionRecord& record : records) {
    out << record_to_json_line(record) << "\n";
  }
}

std::vector<InstructionRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<InstructionRecord> records;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(record_from_json_line(line, line_number));
  }
  return records;
}

size_t word_edit_distance(const std::string& a, const std::string& b) {
  const std::vector<std::string> wa = Vocab::split_words(a);
  const std::vector<std::string> wb = Vocab::split_words(b);
  std::vector<size_t> prev(wb.size() + 1);
  std::vector<size_t> curr(wb.size() + 1);
  for (size_t j = 0; j <= wb.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= wa.size(); ++i) {
    curr[0] = i;
    for (size_t j = 1; j <= wb.size(); ++j) {
      const size_t substitution = prev[j - 1] + (wa[i - 1] == wb[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, substitution});
    }
    std::swap(prev, curr);
  }
  return prev[wb.size()];
}

}  // namespace tim
