#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tim/rng.hpp"

namespace tim {

// One training instance: instruction c, input x, output y, plus the optional
// comparison note and bad output.
struct InstructionRecord {
  enum class Kind { plain, order_guided, dict_guided, error_guided };

  Kind kind = Kind::plain;
  std::string instruction;
  std::string input;
  std::string output;
  std::optional<std::string> bad_output;
  std::optional<std::string> note;
  std::string src_lang = "Src";
  std::string tgt_lang = "Tgt";

  static const char* kind_name(Kind kind);
  static Kind parse_kind(const std::string& name);
};

struct BilingualLexicon {
  // Source words stored lowercased; lookups are case-insensitive on the
  // source side.
  std::map<std::string, std::set<std::string>> entries;

  const std::set<std::string>* lookup(const std::string& src_word) const;
  void add(const std::string& src_word, const std::string& tgt_word);
};

struct MqmRecord {
  std::string system;
  std::string seg_id;
  std::string source;
  std::string target;
  std::string severity;
  std::string category;
};

struct ParallelExample {
  std::string source;
  std::string reference;
  std::optional<std::string> alt_reference;
};

// Desk-scale stand-in for real parallel corpora: random source sentences with
// a bijective word-for-word lexicon, so references are exact and the perfect
// dictionary is known.
struct SyntheticTaskSpec {
  std::vector<std::string> src_vocab;
  std::vector<std::string> tgt_vocab;
  std::map<std::string, std::string> lexicon;                 // bijection
  std::optional<std::map<std::string, std::string>> alt_lexicon;
  size_t min_len = 3;
  size_t max_len = 8;
  size_t corpus_size = 0;
  uint64_t seed = 0;
  std::string src_lang = "Src";
  std::string tgt_lang = "Tgt";

  void validate() const;

  // A ready-made spec: word vocabularies s000.., t000.. (+ alt a000..).
  static SyntheticTaskSpec standard(size_t vocab_words, size_t corpus_size,
                                    uint64_t seed, bool with_alt_reference);
};

inline constexpr const char* kDefaultInstructionTemplate =
    "Translate from {src} to {tgt}.\n";
inline constexpr const char* kNoErrorNote =
    "There are no mistakes in this translation.";
inline constexpr const char* kReverseOrderNote =
    "Generate the translation in reverse word order.";

// --- record builders ---------------------------------------------------

InstructionRecord make_plain(const std::string& src_text,
                             const std::string& tgt_text,
                             const std::string& instruction_template =
                                 kDefaultInstructionTemplate,
                             const std::string& src_lang = "Src",
                             const std::string& tgt_lang = "Tgt");

// Reverses the output word order and attaches the reverse-generation note.
InstructionRecord make_order_guided(const InstructionRecord& record);

// One record per reference, each annotated with the lexicon alignments that
// actually occur in that reference.
std::vector<InstructionRecord> make_dictionary_guided(
    const std::string& src_text, const std::vector<std::string>& references,
    const BilingualLexicon& lexicon,
    const std::string& instruction_template = kDefaultInstructionTemplate,
    const std::string& src_lang = "Src", const std::string& tgt_lang = "Tgt",
    size_t min_word_len = 0);

InstructionRecord make_error_guided(const MqmRecord& record,
                                    const std::string& instruction_template =
                                        kDefaultInstructionTemplate,
                                    const std::string& src_lang = "Src",
                                    const std::string& tgt_lang = "Tgt");

// Corrupts an output by random word deletion or a position swap. The result
// always differs from the input.
std::string make_noisy_bad(const std::string& output, Rng& rng);

std::vector<ParallelExample> gen_synthetic_corpus(const SyntheticTaskSpec& spec);

// Renders the full prompt text: instruction, then the optional note line,
// then the input.
std::string render_prompt(const InstructionRecord& record);

// --- file formats -------------------------------------------------------

BilingualLexicon load_lexicon(const std::string& path);
std::vector<MqmRecord> load_mqm(const std::string& path);

std::string record_to_json_line(const InstructionRecord& record);
InstructionRecord record_from_json_line(const std::string& line,
                                        size_t line_number);

void write_jsonl(const std::string& path,
                 const std::vector<InstructionRecord>& records);
std::vector<InstructionRecord> read_jsonl(const std::string& path);

// Word-level Levenshtein distance, used by the noisy-output invariants.
size_t word_edit_distance(const std::string& a, const std::string& b);

}  // namespace tim
