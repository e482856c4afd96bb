#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tim/tensor.hpp"

namespace tim {

struct ModelConfig {
  size_t vocab_size = 512;
  size_t d_model = 128;
  size_t n_heads = 4;
  size_t n_layers = 4;
  size_t d_ff = 512;
  size_t max_seq_len = 128;
  uint64_t seed = 0;

  void validate() const;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;  // [d_model x d_model]
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1;  // [d_model x d_ff], [d_ff]
  Tensor w_ff2, b_ff2;  // [d_ff x d_model], [d_model]
};

// All model weights. Pre-norm decoder blocks, learned absolute positions,
// untied LM head, and the scalar-per-token reward head.
struct Parameters {
  ModelConfig config;
  Tensor token_embeddings;     // [vocab x d_model]
  Tensor position_embeddings;  // [max_seq_len x d_model]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor lm_head;             // [d_model x vocab]
  Tensor reward_head_weight;  // [d_model]
  Tensor reward_head_bias;    // [1]

  // Visits every tensor with its canonical name, in a fixed order.
  void for_each_named(
      const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_named(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  Tensor* find(const std::string& name);

  size_t total_parameter_count() const;
  bool all_finite() const;
};

// One low-rank pair added to a frozen base matrix. With the base mapping
// y = x * W, the adapted mapping is y = x * W + (alpha/rank) * (x * A^T) * B^T,
// i.e. the conventional W + (alpha/r) * B * A in column-vector form.
struct LoraAdapter {
  std::string target;  // canonical parameter name, e.g. "layers.0.wq"
  Tensor a;            // [rank x d_in]
  Tensor b;            // [d_out x rank], zero-initialized
  size_t rank = 4;
  double alpha = 8.0;
};

struct LoraSet {
  std::vector<LoraAdapter> adapters;

  const LoraAdapter* find(const std::string& target) const;
  size_t parameter_count() const;
};

struct TuningStrategy {
  enum class Kind { full, fix_emb, lora };
  Kind kind = Kind::full;
  size_t lora_rank = 4;
  double lora_alpha = 8.0;
  // Empty means the default: the four attention projections of every layer.
  std::vector<std::string> lora_targets;

  static TuningStrategy parse(const std::string& name);
  std::string name() const;
};

struct ForwardResult {
  Tensor logits;      // [seq x vocab]
  Tensor top_hidden;  // [seq x d_model]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

Parameters init_model(const ModelConfig& config);

// Builds adapters for a LoRA strategy: A seeded normal, B zeros so the
// initial effective weights equal the frozen base.
LoraSet make_lora_adapters(const Parameters& params,
                           const TuningStrategy& strategy, uint64_t seed);

ForwardResult forward(Tape* tape, const Parameters& params,
                      std::span<const int> tokens,
                      const LoraSet* adapters = nullptr);

// score_i = reward_head_weight . top_hidden_i + reward_head_bias, shape [seq].
Tensor reward_scores(Tape* tape, const Parameters& params,
                     const Tensor& top_hidden);

std::vector<NamedTensor> trainable_parameters(Parameters& params,
                                              const TuningStrategy& strategy,
                                              LoraSet* adapters);

// The canonical LoRA target list for a config: wq/wk/wv/wo per layer.
std::vector<std::string> default_lora_targets(const ModelConfig& config);

}  // namespace tim
