#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tim/datagen.hpp"
#include "tim/decoding.hpp"
#include "tim/model.hpp"
#include "tim/vocab.hpp"

namespace tim {

struct MetricReport {
  std::string metric;
  std::string corpus;
  double score = 0.0;
  std::optional<std::vector<double>> per_segment;
  std::string config_snapshot;
};

struct SystemScores {
  std::string system;
  double gold = 0.0;
  double metric = 0.0;
};

// Corpus BLEU in [0, 100]: lowercased whitespace tokens, clipped n-gram
// precisions up to order min(4, shortest hypothesis), add-1 smoothing for
// zero precisions at orders >= 2, and the standard brevity penalty.
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references);

// Reward score of the hypothesis's last token under the training prompt.
double qe_score(const Parameters& params, const Vocab& vocab,
                const std::string& src_lang, const std::string& tgt_lang,
                const std::string& source, const std::string& hypothesis,
                const std::string& prompt_template = kDefaultInferenceTemplate,
                const LoraSet* adapters = nullptr);

// Fraction of unordered system pairs ordered the same way by metric and gold.
// Metric ties count as discordant; gold ties are rejected.
double pairwise_accuracy(const std::vector<SystemScores>& systems);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct SweepResult {
  std::vector<double> bleu_per_template;
  double mean = 0.0;
  double stddev = 0.0;
};

// Decodes the test set once per template and reports BLEU per template.
SweepResult instruction_sweep(const Parameters& params, const Vocab& vocab,
                              const std::vector<InstructionRecord>& test_set,
                              const std::vector<std::string>& templates,
                              const DecodeConfig& decode_cfg,
                              const LoraSet* adapters = nullptr);

struct MetricsEvalRow {
  std::string metric;
  double accuracy = 0.0;
  double pearson_r = 0.0;
};

struct MetricsEvalReport {
  std::vector<MetricsEvalRow> rows;  // sorted by accuracy, descending
};

// Per-segment scores: metric name -> (system -> seg_id -> score).
using SegmentScores =
    std::map<std::string, std::map<std::string, std::map<std::string, double>>>;

MetricsEvalReport metrics_eval(const SegmentScores& metric_scores,
                               const std::map<std::string, double>& gold);

// TSV ingestion for the meta-evaluation harness.
std::map<std::string, std::map<std::string, double>> load_segment_scores(
    const std::string& path);
std::map<std::string, double> load_gold_scores(const std::string& path);

std::string metrics_report_to_json(const MetricsEvalReport& report,
                                   const std::string& config_hash);
std::string metrics_report_to_table(const MetricsEvalReport& report);

// Teacher-forced next-token argmax accuracy over output positions.
double token_accuracy(const Parameters& params, const Vocab& vocab,
                      const std::vector<InstructionRecord>& records,
                      size_t max_text_len,
                      const LoraSet* adapters = nullptr);

}  // namespace tim
