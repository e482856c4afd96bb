#include "tim/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tim/error.hpp"
#include "tim/training.hpp"

namespace tim {

namespace {

std::vector<std::string> bleu_tokens(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return Vocab::split_words(lowered);
}

using NgramCounts = std::map<std::vector<std::string>, size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + i,
                                    tokens.begin() + i + n)] += 1;
  }
  return counts;
}

}  // namespace

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: hypothesis/reference counts differ: " +
                        std::to_string(hypotheses.size()) + " vs " +
                        std::to_string(references.size()));
  }
  if (hypotheses.empty()) {
    throw ContractError("bleu: empty corpus");
  }
  std::vector<std::vector<std::string>> hyp_tokens;
  std::vector<std::vector<std::string>> ref_tokens;
  hyp_tokens.reserve(hypotheses.size());
  ref_tokens.reserve(references.size());
  size_t shortest_hyp = SIZE_MAX;
  size_t hyp_len = 0;
  size_t ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_tokens.push_back(bleu_tokens(hypotheses[i]));
    ref_tokens.push_back(bleu_tokens(references[i]));
    shortest_hyp = std::min(shortest_hyp, hyp_tokens.back().size());
    hyp_len += hyp_tokens.back().size();
    ref_len += ref_tokens.back().size();
  }
  const size_t max_order = std::min<size_t>(4, shortest_hyp);
  if (max_order == 0 || hyp_len == 0) return 0.0;

  double log_precision_sum = 0.0;
  for (size_t n = 1; n <= max_order; ++n) {
    size_t matched = 0;
    size_t total = 0;
    for (size_t i = 0; i < hyp_tokens.size(); ++i) {
      const NgramCounts hyp_counts = count_ngrams(hyp_tokens[i], n);
      const NgramCounts ref_counts = count_ngrams(ref_tokens[i], n);
      for (const auto& [ngram, count] : hyp_counts) {
        total += count;
        const auto it = ref_counts.find(ngram);
        if (it != ref_counts.end()) {
          matched += std::min(count, it->second);
        }
      }
    }
    double precision;
    if (matched == 0 && n >= 2) {
      precision = (static_cast<double>(matched) + 1.0) /
                  (static_cast<double>(total) + 1.0);
    } else {
      if (matched == 0) return 0.0;  // no unigram overlap at all
      precision = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_precision_sum += std::log(precision);
  }
  const double geometric_mean =
      std::exp(log_precision_sum / static_cast<double>(max_order));
  const double brevity_penalty =
      hyp_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len))
          : 1.0;
  return 100.0 * brevity_penalty * geometric_mean;
}

double qe_score(const Parameters& params, const Vocab& vocab,
                const std::string& src_lang, const std::string& tgt_lang,
                const std::string& source, const std::string& hypothesis,
                const std::string& prompt_template, const LoraSet* adapters) {
  const std::vector<int> hyp_tokens = vocab.encode_words(hypothesis);
  if (hyp_tokens.empty()) {
    throw DataError("qe_score: empty hypothesis");
  }
  const std::string prompt_text = render_inference_prompt(
      prompt_template, src_lang, tgt_lang, source, std::nullopt);
  std::vector<int> tokens = vocab.encode_prompt(prompt_text);
  tokens.insert(tokens.end(), hyp_tokens.begin(), hyp_tokens.end());
  const ForwardResult fwd = forward(nullptr, params, tokens, adapters);
  const Tensor scores = reward_scores(nullptr, params, fwd.top_hidden);
  return scores.at(scores.size() - 1);
}

double pairwise_accuracy(const std::vector<SystemScores>& systems) {
  if (systems.size() < 2) {
    throw ContractError("pairwise_accuracy requires at least 2 systems");
  }
  size_t concordant = 0;
  size_t total = 0;
  for (size_t i = 0; i < systems.size(); ++i) {
    for (size_t j = i + 1; j < systems.size(); ++j) {
      if (systems[i].gold == systems[j].gold) {
        throw ContractError("gold scores tie between systems '" +
                            systems[i].system + "' and '" + systems[j].system +
                            "'");
      }
      ++total;
      const double gold_sign = systems[i].gold > systems[j].gold ? 1.0 : -1.0;
      if (systems[i].metric == systems[j].metric) continue;  // discordant
      const double metric_sign =
          systems[i].metric > systems[j].metric ? 1.0 : -1.0;
      if (gold_sign == metric_sign) ++concordant;
    }
  }
  return static_cast<double>(concordant) / static_cast<double>(total);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw ContractError("pearson: input lengths differ");
  }
  if (x.size() < 2) {
    throw ContractError("pearson requires at least 2 points");
  }
  const double n = static_cast<double>(x.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double cov = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    cov += dx * dy;
    var_x += dx * dx;
    var_y += dy * dy;
  }
  if (var_x == 0.0 || var_y == 0.0) {
    throw NumericError("pearson undefined for constant input");
  }
  return cov / std::sqrt(var_x * var_y);
}

SweepResult instruction_sweep(const Parameters& params, const Vocab& vocab,
                              const std::vector<InstructionRecord>& test_set,
                              const std::vector<std::string>& templates,
                              const DecodeConfig& decode_cfg,
                              const LoraSet* adapters) {
  if (templates.size() < 2) {
    throw ContractError("instruction sweep requires at least 2 templates");
  }
  for (const std::string& tpl : templates) {
    if (tpl.find("{input}") == std::string::npos) {
      throw TemplateError("sweep template must contain {input}: " + tpl);
    }
  }
  if (test_set.empty()) {
    throw ContractError("instruction sweep requires a nonempty test set");
  }
  SweepResult result;
  std::vector<std::string> references;
  references.reserve(test_set.size());
  for (const InstructionRecord& record : test_set) {
    references.push_back(record.output);
  }
  for (const std::string& tpl : templates) {
    std::vector<std::string> hypotheses;
    hypotheses.reserve(test_set.size());
    for (const InstructionRecord& record : test_set) {
      const std::string prompt_text =
          render_inference_prompt(tpl, record.src_lang, record.tgt_lang,
                                  record.input, decode_cfg.note);
      const std::vector<int> prompt = vocab.encode_prompt(prompt_text);
      const std::vector<int> out = decode(params, prompt, decode_cfg, adapters);
      hypotheses.push_back(vocab.decode(out));
    }
    result.bleu_per_template.push_back(bleu(hypotheses, references));
  }
  double mean = 0.0;
  for (const double b : result.bleu_per_template) mean += b;
  mean /= static_cast<double>(result.bleu_per_template.size());
  double var = 0.0;
  for (const double b : result.bleu_per_template) {
    var += (b - mean) * (b - mean);
  }
  var /= static_cast<double>(result.bleu_per_template.size());
  result.mean = mean;
  result.stddev = std::sqrt(var);
  return result;
}

MetricsEvalReport metrics_eval(const SegmentScores& metric_scores,
                               const std::map<std::string, double>& gold) {
  if (gold.size() < 2) {
    throw ContractError("metrics_eval requires at least 2 systems");
  }
  MetricsEvalReport report;
  for (const auto& [metric_name, per_system] : metric_scores) {
    // Every system needs a score for every segment seen for any system.
    std::vector<std::string> all_segments;
    for (const auto& [system, segments] : per_system) {
      for (const auto& [seg_id, score] : segments) {
        if (std::find(all_segments.begin(), all_segments.end(), seg_id) ==
            all_segments.end()) {
          all_segments.push_back(seg_id);
        }
      }
    }
    std::vector<SystemScores> systems;
    std::vector<double> metric_means;
    std::vector<double> gold_values;
    for (const auto& [system, gold_score] : gold) {
      const auto sys_it = per_system.find(system);
      if (sys_it == per_system.end()) {
        throw SchemaError("metric '" + metric_name +
                          "' has no scores for system '" + system + "'");
      }
      double sum = 0.0;
      for (const std::string& seg_id : all_segments) {
        const auto seg_it = sys_it->second.find(seg_id);
        if (seg_it == sys_it->second.end()) {
          throw SchemaError("metric '" + metric_name + "', system '" + system +
                            "' is missing segment '" + seg_id + "'");
        }
        sum += seg_it->second;
      }
      const double mean = sum / static_cast<double>(all_segments.size());
      systems.push_back({system, gold_score, mean});
      metric_means.push_back(mean);
      gold_values.push_back(gold_score);
    }
    MetricsEvalRow row;
    row.metric = metric_name;
    row.accuracy = pairwise_accuracy(systems);
    row.pearson_r = pearson(metric_means, gold_values);
    report.rows.push_back(std::move(row));
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const MetricsEvalRow& a, const MetricsEvalRow& b) {
              if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
              return a.metric < b.metric;
            });
  return report;
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

double parse_score(const std::string& text, const std::string& path,
                   size_t line_number) {
  try {
    size_t consumed = 0;
    const double value = std::stod(text, &consumed);
    if (consumed != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ParseError(path + " line " + std::to_string(line_number) +
                     ": invalid score '" + text + "'");
  }
}

}  // namespace

std::map<std::string, std::map<std::string, double>> load_segment_scores(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file: " + path);
  std::map<std::string, std::map<std::string, double>> scores;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError(path + " line " + std::to_string(line_number) +
                       ": expected 'system<TAB>seg_id<TAB>score'");
    }
    scores[fields[0]][fields[1]] = parse_score(fields[2], path, line_number);
  }
  return scores;
}

std::map<std::string, double> load_gold_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gold file: " + path);
  std::map<std::string, double> gold;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_tabs(line);
    if (fields.size() != 2) {
      throw ParseError(path + " line " + std::to_string(line_number) +
                       ": expected 'system<TAB>gold_score'");
    }
    gold[fields[0]] = parse_score(fields[1], path, line_number);
  }
  return gold;
}

std::string metrics_report_to_json(const MetricsEvalReport& report,
                                   const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricsEvalRow& row : report.rows) {
    rows.push_back({{"metric", row.metric},
                    {"accuracy", row.accuracy},
                    {"pearson", row.pearson_r}});
  }
  j["rows"] = rows;
  return j.dump();
}

std::string metrics_report_to_table(const MetricsEvalReport& report) {
  size_t name_width = 6;
  for (const MetricsEvalRow& row : report.rows) {
    name_width = std::max(name_width, row.metric.size());
  }
  std::ostringstream out;
  out << std::left;
  out.width(static_cast<std::streamsize>(name_width));
  out << "metric";
  out << "  accuracy  pearson\n";
  char buf[64];
  for (const MetricsEvalRow& row : report.rows) {
    out.width(static_cast<std::streamsize>(name_width));
    out << row.metric;
    std::snprintf(buf, sizeof(buf), "  %8.4f  %7.4f\n", row.accuracy,
                  row.pearson_r);
    out << buf;
  }
  return out.str();
}

double token_accuracy(const Parameters& params, const Vocab& vocab,
                      const std::vector<InstructionRecord>& records,
                      size_t max_text_len, const LoraSet* adapters) {
  if (records.empty()) {
    throw ContractError("token_accuracy: empty record list");
  }
  size_t correct = 0;
  size_t total = 0;
  for (const InstructionRecord& record : records) {
    const TokenizedRecord tok =
        tokenize_record(record, vocab, max_text_len, false);
    std::vector<int> seq = tok.prompt_tokens;
    seq.insert(seq.end(), tok.y0_tokens.begin(), tok.y0_tokens.end());
    const ForwardResult fwd = forward(nullptr, params, seq, adapters);
    const size_t vocab_size = fwd.logits.shape()[1];
    for (size_t i = 0; i < tok.y0_tokens.size(); ++i) {
      const size_t row = tok.prompt_tokens.size() - 1 + i;
      size_t best = 0;
      for (size_t v = 1; v < vocab_size; ++v) {
        if (fwd.logits.at(row, v) > fwd.logits.at(row, best)) best = v;
      }
      if (static_cast<int>(best) == seq[row + 1]) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace tim
