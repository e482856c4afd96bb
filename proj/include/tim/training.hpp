#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tim/datagen.hpp"
#include "tim/model.hpp"
#include "tim/objectives.hpp"
#include "tim/vocab.hpp"

namespace tim {

struct TrainConfig {
  double learning_rate = 3e-4;
  size_t batch_size = 32;
  size_t epochs = 1;
  size_t max_text_len = 128;
  double lambda = 1.0;
  double weight_decay = 0.0;
  TuningStrategy strategy{};
  uint64_t seed = 0;
  std::optional<double> grad_clip_norm = 1.0;
  std::set<InstructionRecord::Kind> kind_toggles = {
      InstructionRecord::Kind::plain, InstructionRecord::Kind::order_guided,
      InstructionRecord::Kind::dict_guided,
      InstructionRecord::Kind::error_guided};
  bool use_preference = true;

  void validate() const;
};

// Adam first/second moments, one slot per trainable tensor, in the fixed
// order produced by trainable_parameters.
struct OptimizerState {
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots;
  size_t step = 0;

  static OptimizerState init(const std::vector<NamedTensor>& trainable);
};

struct TokenizedRecord {
  std::vector<int> prompt_tokens;
  std::vector<int> y0_tokens;             // output words + eos, truncated
  std::optional<std::vector<int>> y1_tokens;
  bool preference = false;
};

// Renders, encodes and truncates one record. Output tokens are cut from the
// right; the prompt is never truncated.
TokenizedRecord tokenize_record(const InstructionRecord& record,
                                const Vocab& vocab, size_t max_text_len,
                                bool use_preference);

struct GradientTotals {
  double lm_sum = 0.0;
  double pl_sum = 0.0;
};

// Accumulates d(batch loss)/d(params) into the parameter gradients for the
// given slice, using full-batch normalizers lm_count and pl_count. Callable
// on micro-batch slices; contributions sum exactly.
GradientTotals accumulate_batch_gradients(
    const Parameters& params, const LoraSet* adapters,
    std::span<const InstructionRecord> records, const TrainConfig& cfg,
    const Vocab& vocab, size_t lm_count, size_t pl_count,
    size_t record_index_base = 0);

size_t count_preference_records(std::span<const InstructionRecord> records,
                                const TrainConfig& cfg);

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_gradients(std::vector<NamedTensor>& trainable, double max_norm);

// One AdamW update (beta1 0.9, beta2 0.999, eps 1e-8, decoupled weight
// decay) over the trainable set.
void apply_adam(std::vector<NamedTensor>& trainable, OptimizerState& state,
                const TrainConfig& cfg);

// One optimization step over a batch: gradients, optional clipping, Adam.
LossReport train_step(Parameters& params, LoraSet& adapters,
                      std::vector<NamedTensor>& trainable,
                      OptimizerState& state,
                      std::span<const InstructionRecord> batch,
                      const TrainConfig& cfg, const Vocab& vocab);

struct LossRow {
  size_t step = 0;
  double l_lm = 0.0;
  double l_pl = 0.0;
  double total = 0.0;
};

struct Checkpoint {
  uint32_t version = 1;
  ModelConfig model_config;
  TrainConfig train_config;
  Parameters params;
  LoraSet adapters;
  std::vector<std::string> vocab_words;
  std::array<uint64_t, 4> rng_state{};
  uint64_t step = 0;
  std::string config_hash;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRow> loss_log;
  Vocab vocab;
};

// Full training run: deterministic shuffling per epoch, mixed plain and
// preference batches, final checkpoint plus the per-step loss log.
TrainResult train(const std::vector<InstructionRecord>& dataset,
                  const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::string& config_hash = "");

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_loss_log(const std::string& path,
                    const std::vector<LossRow>& rows);

// Canonical JSON round-trip for configs (used by checkpoints and the CLI).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace tim
