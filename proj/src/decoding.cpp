#include "tim/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tim/error.hpp"
#include "tim/rng.hpp"
#include "tim/vocab.hpp"

namespace tim {

namespace {

std::vector<double> log_softmax(const std::vector<double>& logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (const double v : logits) max_logit = std::max(max_logit, v);
  double denom = 0.0;
  for (const double v : logits) denom += std::exp(v - max_logit);
  const double log_denom = std::log(denom);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - max_logit - log_denom;
  }
  return out;
}

size_t argmax_lowest_id(const std::vector<double>& values) {
  size_t best = 0;
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<int> concat_tokens(std::span<const int> prompt,
                               const std::vector<int>& generated) {
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), generated.begin(), generated.end());
  return tokens;
}

}  // namespace

void DecodeConfig::validate() const {
  if (mode == Mode::beam && beam_size < 1) {
    throw ConfigError("beam_size must be at least 1");
  }
  if (temperature <= 0.0) {
    throw ConfigError("temperature must be positive");
  }
}

DecodeConfig::Mode DecodeConfig::parse_mode(const std::string& name) {
  if (name == "greedy") return Mode::greedy;
  if (name == "sample") return Mode::sample;
  if (name == "beam") return Mode::beam;
  throw ConfigError("unknown decode mode: " + name);
}

std::vector<int> greedy_decode_scorer(const StepScorer& scorer,
                                      std::span<const int> prompt,
                                      size_t max_new_tokens, int eos_id) {
  std::vector<int> generated;
  for (size_t step = 0; step < max_new_tokens; ++step) {
    const std::vector<double> scores =
        scorer(concat_tokens(prompt, generated));
    const int next = static_cast<int>(argmax_lowest_id(scores));
    if (next == eos_id) break;
    generated.push_back(next);
  }
  return generated;
}

std::vector<int> sample_decode_scorer(const StepScorer& scorer,
                                      std::span<const int> prompt,
                                      const DecodeConfig& cfg, int eos_id) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<int> generated;
  for (size_t step = 0; step < cfg.max_new_tokens; ++step) {
    const std::vector<double> logits = scorer(concat_tokens(prompt, generated));
    std::vector<double> scaled(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      scaled[i] = logits[i] / cfg.temperature;
    }
    const std::vector<double> log_probs = log_softmax(scaled);
    const double u = rng.next_double();
    double cumulative = 0.0;
    int next = static_cast<int>(log_probs.size()) - 1;
    for (size_t i = 0; i < log_probs.size(); ++i) {
      cumulative += std::exp(log_probs[i]);
      if (u < cumulative) {
        next = static_cast<int>(i);
        break;
      }
    }
    if (next == eos_id) break;
    generated.push_back(next);
  }
  return generated;
}

BeamResult beam_search_scorer(const StepScorer& scorer,
                              std::span<const int> prompt,
                              const DecodeConfig& cfg, int eos_id) {
  if (cfg.beam_size < 1) {
    throw ConfigError("beam_size must be at least 1");
  }
  struct Candidate {
    std::vector<int> tokens;  // includes eos when finished
    double sum_log_prob = 0.0;
    bool finished = false;
  };

  std::vector<Candidate> active{{{}, 0.0, false}};
  std::vector<Candidate> pool;

  for (size_t step = 0; step < cfg.max_new_tokens && !active.empty(); ++step) {
    std::vector<Candidate> candidates;
    candidates.reserve(active.size() * 8);
    for (const Candidate& hyp : active) {
      const std::vector<double> log_probs =
          log_softmax(scorer(concat_tokens(prompt, hyp.tokens)));
      for (size_t v = 0; v < log_probs.size(); ++v) {
        Candidate next;
        next.tokens = hyp.tokens;
        next.tokens.push_back(static_cast<int>(v));
        next.sum_log_prob = hyp.sum_log_prob + log_probs[v];
        next.finished = static_cast<int>(v) == eos_id;
        candidates.push_back(std::move(next));
      }
    }
    // Highest score first; exact ties resolved toward the lexicographically
    // smallest token sequence so searches are reproducible.
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.sum_log_prob != b.sum_log_prob) {
                  return a.sum_log_prob > b.sum_log_prob;
                }
                return a.tokens < b.tokens;
              });
    if (candidates.size() > cfg.beam_size) {
      candidates.resize(cfg.beam_size);
    }
    active.clear();
    for (Candidate& c : candidates) {
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
  }
  for (Candidate& c : active) pool.push_back(std::move(c));

  BeamResult result;
  if (pool.empty()) {
    // Zero-length generation budget.
    result.tokens = {};
    result.score = 0.0;
    return result;
  }
  // Final ranking by average per-token log-probability.
  const auto average = [](const Candidate& c) {
    return c.tokens.empty() ? 0.0
                            : c.sum_log_prob /
                                  static_cast<double>(c.tokens.size());
  };
  size_t best = 0;
  for (size_t i = 1; i < pool.size(); ++i) {
    const double a = average(pool[i]);
    const double b = average(pool[best]);
    if (a > b || (a == b && pool[i].tokens < pool[best].tokens)) {
      best = i;
    }
  }
  for (const Candidate& c : pool) {
    Hypothesis h;
    h.tokens = c.tokens;
    if (h.finished = c.finished; h.finished) h.tokens.pop_back();
    h.sum_log_prob = c.sum_log_prob;
    h.avg_log_prob = average(c);
    result.pool.push_back(std::move(h));
  }
  result.score = average(pool[best]);
  result.tokens = pool[best].tokens;
  if (pool[best].finished) result.tokens.pop_back();
  return result;
}

StepScorer make_model_scorer(const Parameters& params,
                             const LoraSet* adapters) {
  const size_t max_len = params.config.max_seq_len;
  return [&params, adapters, max_len](std::span<const int> tokens) {
    if (tokens.size() > max_len) {
      throw DataError("decode context of " + std::to_string(tokens.size()) +
                      " tokens exceeds max_seq_len " + std::to_string(max_len));
    }
    const ForwardResult fwd = forward(nullptr, params, tokens, adapters);
    const size_t vocab = fwd.logits.shape()[1];
    const size_t last = fwd.logits.shape()[0] - 1;
    std::vector<double> row(vocab);
    for (size_t v = 0; v < vocab; ++v) row[v] = fwd.logits.at(last, v);
    return row;
  };
}

namespace {

// Generation must leave the prompt plus at least one new token in context.
size_t clamp_budget(const Parameters& params, std::span<const int> prompt,
                    size_t requested) {
  const size_t max_len = params.config.max_seq_len;
  if (prompt.empty()) {
    throw ContractError("decode: empty prompt");
  }
  if (prompt.size() >= max_len) {
    throw DataError("prompt of " + std::to_string(prompt.size()) +
                    " tokens does not fit the context of " +
                    std::to_string(max_len));
  }
  return std::min(requested, max_len - prompt.size());
}

}  // namespace

std::vector<int> greedy_decode(const Parameters& params,
                               std::span<const int> prompt_tokens,
                               const DecodeConfig& cfg,
                               const LoraSet* adapters) {
  const size_t budget = clamp_budget(params, prompt_tokens, cfg.max_new_tokens);
  return greedy_decode_scorer(make_model_scorer(params, adapters),
                              prompt_tokens, budget, Vocab::kEos);
}

std::vector<int> sample_decode(const Parameters& params,
                               std::span<const int> prompt_tokens,
                               const DecodeConfig& cfg,
                               const LoraSet* adapters) {
  DecodeConfig capped = cfg;
  capped.max_new_tokens = clamp_budget(params, prompt_tokens,
                                       cfg.max_new_tokens);
  return sample_decode_scorer(make_model_scorer(params, adapters),
                              prompt_tokens, capped, Vocab::kEos);
}

BeamResult beam_search(const Parameters& params,
                       std::span<const int> prompt_tokens,
                       const DecodeConfig& cfg, const LoraSet* adapters) {
  DecodeConfig capped = cfg;
  capped.max_new_tokens = clamp_budget(params, prompt_tokens,
                                       cfg.max_new_tokens);
  return beam_search_scorer(make_model_scorer(params, adapters), prompt_tokens,
                            capped, Vocab::kEos);
}

std::vector<int> decode(const Parameters& params,
                        std::span<const int> prompt_tokens,
                        const DecodeConfig& cfg, const LoraSet* adapters) {
  switch (cfg.mode) {
    case DecodeConfig::Mode::greedy:
      return greedy_decode(params, prompt_tokens, cfg, adapters);
    case DecodeConfig::Mode::sample:
      return sample_decode(params, prompt_tokens, cfg, adapters);
    case DecodeConfig::Mode::beam:
      return beam_search(params, prompt_tokens, cfg, adapters).tokens;
  }
  throw ConfigError("unknown decode mode");
}

std::string render_inference_prompt(const std::string& prompt_template,
                                    const std::string& src_lang,
                                    const std::string& tgt_lang,
                                    const std::string& input,
                                    const std::optional<std::string>& note) {
  if (prompt_template.find("{input}") == std::string::npos) {
    throw TemplateError("inference template must contain {input}: " +
                        prompt_template);
  }
  std::string text = prompt_template;
  const auto replace_all = [&text](const std::string& key,
                                   const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
      text.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace_all("{src}", src_lang);
  replace_all("{tgt}", tgt_lang);
  std::string input_block = input;
  if (note.has_value() && !note->empty()) {
    input_block = "Note: " + *note + "\n" + input;
  }
  replace_all("{input}", input_block);
  return text;
}

}  // namespace tim
