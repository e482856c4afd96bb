#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tim/model.hpp"

namespace tim {

struct DecodeConfig {
  enum class Mode { greedy, sample, beam };
  Mode mode = Mode::greedy;
  size_t beam_size = 4;
  size_t max_new_tokens = 64;
  double temperature = 1.0;
  uint64_t seed = 0;
  std::optional<std::string> note;

  void validate() const;
  static Mode parse_mode(const std::string& name);
};

// Next-token log-probabilities given prompt + generated prefix. Decoders are
// written against this so searches can be exercised on hand-built logit
// tables as well as real models.
using StepScorer =
    std::function<std::vector<double>(std::span<const int> tokens)>;

struct Hypothesis {
  std::vector<int> tokens;  // without the terminating eos
  double sum_log_prob = 0.0;
  double avg_log_prob = 0.0;
  bool finished = false;
};

struct BeamResult {
  std::vector<int> tokens;  // best hypothesis, without the terminating eos
  double score = 0.0;       // average per-token log-probability
  std::vector<Hypothesis> pool;
};

// --- scorer-level searches (deterministic; ties break to the lowest id) ---

std::vector<int> greedy_decode_scorer(const StepScorer& scorer,
                                      std::span<const int> prompt,
                                      size_t max_new_tokens, int eos_id);

std::vector<int> sample_decode_scorer(const StepScorer& scorer,
                                      std::span<const int> prompt,
                                      const DecodeConfig& cfg, int eos_id);

BeamResult beam_search_scorer(const StepScorer& scorer,
                              std::span<const int> prompt,
                              const DecodeConfig& cfg, int eos_id);

// --- model-level entry points --------------------------------------------

StepScorer make_model_scorer(const Parameters& params,
                             const LoraSet* adapters);

std::vector<int> greedy_decode(const Parameters& params,
                               std::span<const int> prompt_tokens,
                               const DecodeConfig& cfg,
                               const LoraSet* adapters = nullptr);

std::vector<int> sample_decode(const Parameters& params,
                               std::span<const int> prompt_tokens,
                               const DecodeConfig& cfg,
                               const LoraSet* adapters = nullptr);

BeamResult beam_search(const Parameters& params,
                       std::span<const int> prompt_tokens,
                       const DecodeConfig& cfg,
                       const LoraSet* adapters = nullptr);

std::vector<int> decode(const Parameters& params,
                        std::span<const int> prompt_tokens,
                        const DecodeConfig& cfg,
                        const LoraSet* adapters = nullptr);

// Fills {src}/{tgt}/{input} in an inference template, inserting the optional
// note line ahead of the input. The template must contain {input}.
std::string render_inference_prompt(const std::string& prompt_template,
                                    const std::string& src_lang,
                                    const std::string& tgt_lang,
                                    const std::string& input,
                                    const std::optional<std::string>& note);

inline constexpr const char* kDefaultInferenceTemplate =
    "Translate from {src} to {tgt}.\n{input}";

}  // namespace tim
