#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "tim/datagen.hpp"
#include "tim/error.hpp"
#include "tim/rng.hpp"
#include "tim/vocab.hpp"

using namespace tim;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) {
    path = std::string("/tmp/tim_datagen_") + name;
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

}  // namespace

TEST_CASE("make_plain fills the default template") {
  const InstructionRecord record = make_plain("ab cd", "AB CD");
  CHECK(record.kind == InstructionRecord::Kind::plain);
  CHECK(record.instruction == "Translate from Src to Tgt.\n");
  CHECK(record.input == "ab cd");
  CHECK(record.output == "AB CD");
  CHECK_FALSE(record.note.has_value());
  CHECK_FALSE(record.bad_output.has_value());

  CHECK_THROWS_AS(make_plain("", "x"), DataError);
  CHECK_THROWS_AS(make_plain("x", ""), DataError);
  CHECK_THROWS_AS(make_plain("x", "y", "no placeholders here"),
                  TemplateError);
}

TEST_CASE("make_order_guided reverses words and is an involution") {
  const InstructionRecord plain = make_plain("a b c", "A B C");
  const InstructionRecord reversed = make_order_guided(plain);
  CHECK(reversed.kind == InstructionRecord::Kind::order_guided);
  CHECK(reversed.output == "C B A");
  CHECK(reversed.note.has_value());

  const InstructionRecord single = make_order_guided(make_plain("a", "A"));
  CHECK(single.output == "A");
  CHECK(single.note.has_value());

  const InstructionRecord twice = make_order_guided(reversed);
  CHECK(twice.output == plain.output);

  // Tokenize, reverse, detokenize reproduces the reference exactly.
  std::vector<std::string> words = Vocab::split_words(reversed.output);
  std::reverse(words.begin(), words.end());
  std::string joined;
  for (const std::string& w : words) {
    if (!joined.empty()) joined.push_back(' ');
    joined += w;
  }
  CHECK(joined == plain.output);
}

TEST_CASE("make_dictionary_guided aligns per reference") {
  BilingualLexicon lexicon;
  lexicon.add("ab", "X");
  lexicon.add("ab", "Y");
  const auto records =
      make_dictionary_guided("ab", {"X", "Y"}, lexicon);
  REQUIRE(records.size() == 2);
  CHECK(records[0].kind == InstructionRecord::Kind::dict_guided);
  CHECK(records[0].output == "X");
  REQUIRE(records[0].note.has_value());
  CHECK(records[0].note->find("ab -> X") != std::string::npos);
  CHECK(records[0].note->find("ab -> Y") == std::string::npos);
  CHECK(records[1].output == "Y");
  REQUIRE(records[1].note.has_value());
  CHECK(records[1].note->find("ab -> Y") != std::string::npos);

  // Lexicon that misses every word yields a record without a note.
  BilingualLexicon empty;
  const auto plain_note = make_dictionary_guided("qq rr", {"Z"}, empty);
  REQUIRE(plain_note.size() == 1);
  CHECK_FALSE(plain_note[0].note.has_value());
  CHECK(plain_note[0].kind == InstructionRecord::Kind::dict_guided);

  CHECK_THROWS_AS(make_dictionary_guided("x", {}, lexicon), DataError);

  // Source lookup is case-insensitive.
  BilingualLexicon cased;
  cased.add("Haus", "house");
  const auto cased_records = make_dictionary_guided("haus", {"house"}, cased);
  REQUIRE(cased_records[0].note.has_value());
}

TEST_CASE("dictionary-guided over a synthetic bijection aligns every word") {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(20, 50, 4, true);
  const auto corpus = gen_synthetic_corpus(spec);
  BilingualLexicon lexicon;
  for (const auto& [src, tgt] : spec.lexicon) lexicon.add(src, tgt);
  for (const auto& [src, tgt] : *spec.alt_lexicon) lexicon.add(src, tgt);
  for (const ParallelExample& example : corpus) {
    const std::vector<std::string> refs = {example.reference,
                                           *example.alt_reference};
    const auto records = make_dictionary_guided(example.source, refs, lexicon);
    REQUIRE(records.size() == 2);
    for (const auto& record : records) {
      REQUIRE(record.note.has_value());
      // Every distinct source word must appear in the alignment note.
      const std::vector<std::string> src_words =
          Vocab::split_words(example.source);
      const std::set<std::string> seen(src_words.begin(), src_words.end());
      for (const std::string& word : seen) {
        CHECK(record.note->find(word + " -> ") != std::string::npos);
      }
    }
  }
}

TEST_CASE("make_error_guided note wording") {
  MqmRecord clean{"sysA", "1", "src text", "tgt text", "No-error", ""};
  const InstructionRecord good = make_error_guided(clean);
  CHECK(good.kind == InstructionRecord::Kind::error_guided);
  CHECK(good.note == std::string("There are no mistakes in this translation."));

  MqmRecord major{"sysA", "2", "src", "tgt", "Major",
                  "locale convention/format"};
  const InstructionRecord bad = make_error_guided(major);
  CHECK(bad.note ==
        std::string(
            "This translation contains a Major locale convention/format "
            "error."));

  MqmRecord missing{"sysA", "3", "src", "tgt", "", "cat"};
  CHECK_THROWS_AS(make_error_guided(missing), DataError);
}

TEST_CASE("make_noisy_bad corrupts deterministically") {
  {
    Rng rng(1234);
    const std::string once = make_noisy_bad("w1 w2 w3 w4", rng);
    Rng rng2(1234);
    const std::string again = make_noisy_bad("w1 w2 w3 w4", rng2);
    CHECK(once == again);
    CHECK(once != "w1 w2 w3 w4");
  }
  {
    // Single-word degenerate input duplicates the word.
    Rng rng(5);
    CHECK(make_noisy_bad("solo", rng) == "solo solo");
  }
  {
    // All-identical words can only be corrupted by changing the length.
    Rng rng(9);
    const std::string out = make_noisy_bad("x x x", rng);
    CHECK(out != "x x x");
  }
  // Edit distance >= 1 in every emitted corruption.
  Rng rng(31337);
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(30, 200, 11, false);
  for (const ParallelExample& example : gen_synthetic_corpus(spec)) {
    const std::string bad = make_noisy_bad(example.reference, rng);
    CHECK(word_edit_distance(bad, example.reference) >= 1);
    CHECK(bad != example.reference);
  }
}

TEST_CASE("gen_synthetic_corpus is deterministic and well-formed") {
  SyntheticTaskSpec spec;
  spec.src_vocab = {"a", "b"};
  spec.tgt_vocab = {"A", "B"};
  spec.lexicon = {{"a", "A"}, {"b", "B"}};
  spec.min_len = 2;
  spec.max_len = 2;
  spec.corpus_size = 10;
  spec.seed = 77;
  const auto corpus = gen_synthetic_corpus(spec);
  CHECK(corpus.size() == 10);
  for (const ParallelExample& ex : corpus) {
    const auto src_words = Vocab::split_words(ex.source);
    const auto ref_words = Vocab::split_words(ex.reference);
    REQUIRE(src_words.size() == 2);
    REQUIRE(ref_words.size() == 2);
    for (size_t i = 0; i < src_words.size(); ++i) {
      CHECK(ref_words[i] == spec.lexicon.at(src_words[i]));
    }
  }
  const auto corpus2 = gen_synthetic_corpus(spec);
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(corpus[i].source == corpus2[i].source);
    CHECK(corpus[i].reference == corpus2[i].reference);
  }

  SyntheticTaskSpec broken = spec;
  broken.lexicon["b"] = "A";  // not a bijection
  CHECK_THROWS_AS(gen_synthetic_corpus(broken), ConfigError);

  SyntheticTaskSpec sized = SyntheticTaskSpec::standard(10, 1000, 3, false);
  CHECK(gen_synthetic_corpus(sized).size() == 1000);
}

TEST_CASE("render_prompt places the note between instruction and input") {
  InstructionRecord record = make_plain("in put", "out");
  CHECK(render_prompt(record) == "Translate from Src to Tgt.\nin put");
  record.note = "Something to know.";
  CHECK(render_prompt(record) ==
        "Translate from Src to Tgt.\nNote: Something to know.\nin put");
}

TEST_CASE("load_lexicon merges duplicates and reports bad lines") {
  TempFile good("lex_good.txt", "cat Katze\ncat Kater\ndog Hund\n");
  const BilingualLexicon lexicon = load_lexicon(good.path);
  const auto* cat = lexicon.lookup("cat");
  REQUIRE(cat != nullptr);
  CHECK(cat->size() == 2);
  CHECK(cat->count("Katze") == 1);
  CHECK(cat->count("Kater") == 1);

  TempFile bad("lex_bad.txt", "cat Katze\none two three\n");
  try {
    load_lexicon(bad.path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_mqm selects columns by header name") {
  TempFile good("mqm_good.tsv",
                "system\tseg_id\tsource\ttarget\tcategory\tseverity\n"
                "sysA\t1\tsrc one\ttgt one\tAccuracy/Omission\tMajor\n"
                "sysB\t1\tsrc one\ttgt two\tno-error\tNo-error\n");
  const auto records = load_mqm(good.path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].system == "sysA");
  CHECK(records[0].severity == "Major");
  CHECK(records[0].category == "Accuracy/Omission");
  CHECK(records[1].severity == "No-error");

  TempFile missing("mqm_missing.tsv",
                   "system\tseg_id\tsource\ttarget\tcategory\n"
                   "sysA\t1\ta\tb\tc\n");
  CHECK_THROWS_AS(load_mqm(missing.path), SchemaError);

  TempFile ragged("mqm_ragged.tsv",
                  "system\tseverity\nsysA\tMajor\textra\n");
  CHECK_THROWS_AS(load_mqm(ragged.path), ParseError);
}

TEST_CASE("jsonl round trip and schema validation") {
  std::vector<InstructionRecord> records;
  InstructionRecord r1 = make_plain("a b", "A B");
  InstructionRecord r2 = make_order_guided(r1);
  r2.bad_output = "B";
  records.push_back(r1);
  records.push_back(r2);

  const std::string path = "/tmp/tim_datagen_round.jsonl";
  write_jsonl(path, records);
  const auto loaded = read_jsonl(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].kind == InstructionRecord::Kind::plain);
  CHECK(loaded[0].output == "A B");
  CHECK_FALSE(loaded[0].bad_output.has_value());
  CHECK(loaded[1].kind == InstructionRecord::Kind::order_guided);
  CHECK(loaded[1].bad_output == std::string("B"));
  CHECK(loaded[1].note.has_value());

  // Byte-identical rewrite.
  const std::string first = read_file(path);
  write_jsonl(path, loaded);
  CHECK(read_file(path) == first);
  std::remove(path.c_str());

  TempFile unknown("unknown_key.jsonl",
                   R"({"kind":"plain","instruction":"i","input":"x","output":"y","bad_output":null,"note":null,"src_lang":"S","tgt_lang":"T","extra":1})"
                   "\n");
  CHECK_THROWS_AS(read_jsonl(unknown.path), SchemaError);

  TempFile badkind("bad_kind.jsonl",
                   R"({"kind":"mystery","instruction":"i","input":"x","output":"y","bad_output":null,"note":null,"src_lang":"S","tgt_lang":"T"})"
                   "\n");
  CHECK_THROWS_AS(read_jsonl(badkind.path), SchemaError);

  TempFile equal_bad(
      "equal_bad.jsonl",
      R"({"kind":"plain","instruction":"i","input":"x","output":"y","bad_output":"y","note":null,"src_lang":"S","tgt_lang":"T"})"
      "\n");
  CHECK_THROWS_AS(read_jsonl(equal_bad.path), SchemaError);
}
