#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "tim/error.hpp"
#include "tim/evaluation.hpp"
#include "tim/rng.hpp"
#include "tim/training.hpp"

using namespace tim;

namespace {

std::string random_sentence(Rng& rng, size_t words, size_t vocab) {
  std::string out;
  for (size_t i = 0; i < words; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += "w" + std::to_string(rng.next_below(vocab));
  }
  return out;
}

}  // namespace

TEST_CASE("bleu hand-verified examples") {
  CHECK(bleu({"the cat sat on the mat"}, {"the cat sat on the mat"}) == 100.0);

  // p1 = 1/3, p2 = (0+1)/(2+1), p3 = (0+1)/(1+1), BP = 1.
  const double smoothed = bleu({"the the the"}, {"the cat"});
  const double expected = 100.0 * std::pow((1.0 / 3.0) * (1.0 / 3.0) * 0.5,
                                           1.0 / 3.0);
  CHECK(smoothed == doctest::Approx(expected).epsilon(1e-12));
  CHECK(smoothed == doctest::Approx(38.2).epsilon(0.01));

  CHECK(bleu({""}, {"the cat"}) == 0.0);

  // Case-insensitive tokenization.
  CHECK(bleu({"The Cat"}, {"the cat"}) == 100.0);

  CHECK_THROWS_AS(bleu({"a"}, {"a", "b"}), ContractError);

  // Brevity penalty: one-word hypothesis against a two-word reference.
  const double brevity = bleu({"the"}, {"the cat"});
  CHECK(brevity == doctest::Approx(100.0 * std::exp(1.0 - 2.0)).epsilon(1e-9));
}

TEST_CASE("bleu matches the brute-force counter on random corpora") {
  Rng rng(2718);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t corpus_size = 1 + rng.next_below(6);
    std::vector<std::string> hyps;
    std::vector<std::string> refs;
    for (size_t i = 0; i < corpus_size; ++i) {
      hyps.push_back(random_sentence(rng, 1 + rng.next_below(8), 6));
      refs.push_back(random_sentence(rng, 1 + rng.next_below(8), 6));
    }
    const double fast = bleu(hyps, refs);
    const double brute = testing::brute_force_bleu(hyps, refs);
    CHECK(fast == doctest::Approx(brute).epsilon(1e-9));
  }
}

TEST_CASE("bleu is permutation invariant as a corpus metric") {
  Rng rng(3);
  std::vector<std::string> hyps;
  std::vector<std::string> refs;
  for (int i = 0; i < 5; ++i) {
    hyps.push_back(random_sentence(rng, 4 + rng.next_below(3), 5));
    refs.push_back(random_sentence(rng, 4 + rng.next_below(3), 5));
  }
  const double base = bleu(hyps, refs);
  std::vector<size_t> order = {4, 2, 0, 3, 1};
  std::vector<std::string> hyps2, refs2;
  for (const size_t i : order) {
    hyps2.push_back(hyps[i]);
    refs2.push_back(refs[i]);
  }
  CHECK(bleu(hyps2, refs2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("pearson examples and errors") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(pearson({1, 2, 3}, {5, 5, 5}), NumericError);
  CHECK_THROWS_AS(pearson({1}, {2}), ContractError);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), ContractError);

  // pearson(x, a*x + b) = sign(a).
  Rng rng(8);
  std::vector<double> x;
  for (int i = 0; i < 10; ++i) x.push_back(rng.next_normal());
  std::vector<double> pos, neg;
  for (const double v : x) {
    pos.push_back(2.5 * v + 1.0);
    neg.push_back(-0.3 * v + 4.0);
  }
  CHECK(pearson(x, pos) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pairwise_accuracy hand cases") {
  // gold [3,2,1], metric [0.9,0.5,0.7]: pairs (1,2),(1,3) concordant,
  // (2,3) discordant.
  std::vector<SystemScores> systems = {
      {"s1", 3.0, 0.9}, {"s2", 2.0, 0.5}, {"s3", 1.0, 0.7}};
  CHECK(pairwise_accuracy(systems) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  std::vector<SystemScores> agree = {
      {"a", 1.0, 0.1}, {"b", 2.0, 0.2}, {"c", 3.0, 0.3}};
  CHECK(pairwise_accuracy(agree) == 1.0);

  std::vector<SystemScores> disagree = {
      {"a", 1.0, -0.1}, {"b", 2.0, -0.2}, {"c", 3.0, -0.3}};
  CHECK(pairwise_accuracy(disagree) == 0.0);

  // Metric ties count as discordant.
  std::vector<SystemScores> tied = {{"a", 1.0, 0.5}, {"b", 2.0, 0.5}};
  CHECK(pairwise_accuracy(tied) == 0.0);

  std::vector<SystemScores> gold_tie = {{"a", 1.0, 0.5}, {"b", 1.0, 0.6}};
  try {
    pairwise_accuracy(gold_tie);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("a") != std::string::npos);
    CHECK(msg.find("b") != std::string::npos);
  }

  // Invariant under strictly monotone transforms of the metric.
  std::vector<SystemScores> base = {
      {"a", 3.0, 0.2}, {"b", 1.0, -0.4}, {"c", 2.0, 0.05}, {"d", 5.0, 0.9}};
  const double acc = pairwise_accuracy(base);
  std::vector<SystemScores> squashed = base;
  for (auto& s : squashed) s.metric = std::tanh(3.0 * s.metric) + 7.0;
  CHECK(pairwise_accuracy(squashed) == acc);
}

TEST_CASE("qe_score uses the last hypothesis token") {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 16;
  cfg.max_seq_len = 32;
  cfg.seed = 4;
  Parameters params = init_model(cfg);
  Vocab vocab = Vocab::build({"translate from src to tgt a b c d e f"}, 64);

  // Zero head: score 0 for any input.
  CHECK(qe_score(params, vocab, "Src", "Tgt", "a b", "c d") == 0.0);

  Rng rng(5);
  for (size_t i = 0; i < params.reward_head_weight.size(); ++i) {
    params.reward_head_weight.at(i) = rng.next_normal();
  }
  const double score = qe_score(params, vocab, "Src", "Tgt", "a b", "c d");
  const double again = qe_score(params, vocab, "Src", "Tgt", "a b", "c d");
  CHECK(score == again);
  CHECK(score != 0.0);

  CHECK_THROWS_AS(qe_score(params, vocab, "Src", "Tgt", "a b", ""), DataError);
}

TEST_CASE("metrics_eval matches hand-computed values on a 4-system fixture") {
  // Gold: s1 > s2 > s3 > s4. Two metrics, segment scores chosen so system
  // means are exact in binary (quarters).
  SegmentScores scores;
  const std::vector<std::string> systems = {"s1", "s2", "s3", "s4"};
  // metricA means: s1 2.0, s2 1.0, s3 0.5, s4 0.25 (perfect ordering).
  scores["metricA"]["s1"] = {{"seg1", 2.0}, {"seg2", 2.0}};
  scores["metricA"]["s2"] = {{"seg1", 1.5}, {"seg2", 0.5}};
  scores["metricA"]["s3"] = {{"seg1", 0.75}, {"seg2", 0.25}};
  scores["metricA"]["s4"] = {{"seg1", 0.25}, {"seg2", 0.25}};
  // metricB means: s1 0.5, s2 1.0, s3 0.25, s4 0.125 (one swapped pair).
  scores["metricB"]["s1"] = {{"seg1", 0.5}, {"seg2", 0.5}};
  scores["metricB"]["s2"] = {{"seg1", 1.0}, {"seg2", 1.0}};
  scores["metricB"]["s3"] = {{"seg1", 0.25}, {"seg2", 0.25}};
  scores["metricB"]["s4"] = {{"seg1", 0.125}, {"seg2", 0.125}};
  const std::map<std::string, double> gold = {
      {"s1", 4.0}, {"s2", 3.0}, {"s3", 2.0}, {"s4", 1.0}};

  const MetricsEvalReport report = metrics_eval(scores, gold);
  REQUIRE(report.rows.size() == 2);
  // Sorted by accuracy: metricA (1.0) before metricB (5/6).
  CHECK(report.rows[0].metric == "metricA");
  CHECK(report.rows[0].accuracy == 1.0);
  CHECK(report.rows[1].metric == "metricB");
  CHECK(std::abs(report.rows[1].accuracy - 5.0 / 6.0) <= 1e-12);

  // Hand Pearson for metricA means [2, 1, 0.5, 0.25] vs gold [4, 3, 2, 1]:
  // cov = 1.28125, var_m = 1.796875, var_g = 5 => r = 0.4275/... computed
  // directly here as the oracle.
  const std::vector<double> means = {2.0, 1.0, 0.5, 0.25};
  const std::vector<double> golds = {4.0, 3.0, 2.0, 1.0};
  double mm = 0.0, mg = 0.0;
  for (int i = 0; i < 4; ++i) {
    mm += means[i];
    mg += golds[i];
  }
  mm /= 4.0;
  mg /= 4.0;
  double cov = 0.0, vm = 0.0, vg = 0.0;
  for (int i = 0; i < 4; ++i) {
    cov += (means[i] - mm) * (golds[i] - mg);
    vm += (means[i] - mm) * (means[i] - mm);
    vg += (golds[i] - mg) * (golds[i] - mg);
  }
  const double hand_r = cov / std::sqrt(vm * vg);
  CHECK(std::abs(report.rows[0].pearson_r - hand_r) <= 1e-12);

  // Missing one segment for one system must fail loudly.
  SegmentScores broken = scores;
  broken["metricA"]["s3"].erase("seg2");
  try {
    metrics_eval(broken, gold);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("s3") != std::string::npos);
    CHECK(msg.find("seg2") != std::string::npos);
  }

  // Two systems in perfect agreement.
  SegmentScores two;
  two["m"]["x"] = {{"seg", 1.0}};
  two["m"]["y"] = {{"seg", 2.0}};
  const MetricsEvalReport tiny =
      metrics_eval(two, {{"x", 1.0}, {"y", 2.0}});
  CHECK(tiny.rows[0].accuracy == 1.0);
}

TEST_CASE("score and gold file parsing") {
  const std::string score_path = "/tmp/tim_eval_scores.tsv";
  {
    std::ofstream out(score_path);
    out << "sysA\tseg1\t0.5\nsysA\tseg2\t0.25\nsysB\tseg1\t-1.5\nsysB\tseg2\t0\n";
  }
  const auto scores = load_segment_scores(score_path);
  CHECK(scores.at("sysA").at("seg2") == 0.25);
  CHECK(scores.at("sysB").at("seg1") == -1.5);
  std::remove(score_path.c_str());

  const std::string gold_path = "/tmp/tim_eval_gold.tsv";
  {
    std::ofstream out(gold_path);
    out << "sysA\t3.5\nsysB\t1.25\n";
  }
  const auto gold = load_gold_scores(gold_path);
  CHECK(gold.at("sysA") == 3.5);
  std::remove(gold_path.c_str());

  {
    std::ofstream out(score_path);
    out << "sysA\tseg1\tnot_a_number\n";
  }
  CHECK_THROWS_AS(load_segment_scores(score_path), ParseError);
  {
    std::ofstream out(score_path);
    out << "sysA\tseg1\n";
  }
  CHECK_THROWS_AS(load_segment_scores(score_path), ParseError);
  std::remove(score_path.c_str());
}

TEST_CASE("instruction_sweep contract checks and identical templates") {
  ModelConfig mc;
  mc.vocab_size = 64;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.d_ff = 8;
  mc.max_seq_len = 48;
  mc.seed = 12;
  Parameters params = init_model(mc);
  std::vector<InstructionRecord> test_set = {make_plain("a b", "c d"),
                                             make_plain("b a", "d c")};
  Vocab vocab = Vocab::build({"translate from src to tgt. a b c d"}, 64);
  DecodeConfig cfg;
  cfg.max_new_tokens = 4;

  CHECK_THROWS_AS(instruction_sweep(params, vocab, test_set,
                                    {"only one {input}"}, cfg),
                  ContractError);
  CHECK_THROWS_AS(instruction_sweep(params, vocab, test_set,
                                    {"{input} ok", "missing placeholder"},
                                    cfg),
                  TemplateError);

  const SweepResult result = instruction_sweep(
      params, vocab, test_set,
      {"Translate from {src} to {tgt}.\n{input}",
       "Translate from {src} to {tgt}.\n{input}"},
      cfg);
  REQUIRE(result.bleu_per_template.size() == 2);
  CHECK(result.bleu_per_template[0] == result.bleu_per_template[1]);
  CHECK(result.stddev == 0.0);
}

TEST_CASE("metrics report rendering") {
  MetricsEvalReport report;
  report.rows = {{"alpha", 1.0, 0.5}, {"beta", 0.5, -0.25}};
  const std::string json = metrics_report_to_json(report, "cafebabe");
  CHECK(json.find("\"config_hash\":\"cafebabe\"") != std::string::npos);
  CHECK(json.find("\"metric\":\"alpha\"") != std::string::npos);
  const std::string table = metrics_report_to_table(report);
  CHECK(table.find("alpha") != std::string::npos);
  CHECK(table.find("accuracy") != std::string::npos);
}
