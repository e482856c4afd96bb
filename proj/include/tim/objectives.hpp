#pragma once

#include <span>
#include <vector>

#include "tim/model.hpp"
#include "tim/tensor.hpp"

namespace tim {

// Tokenized preference instance: prompt, preferred output y0, bad output y1,
// the divergence index (longest common token prefix of y0/y1) and the padded
// length N = max(|y0|, |y1|).
struct ComparisonBatch {
  std::vector<int> prompt_tokens;
  std::vector<int> y0_tokens;
  std::vector<int> y1_tokens;
  size_t divergence = 0;  // I
  size_t max_len = 0;     // N

  static ComparisonBatch make(std::vector<int> prompt, std::vector<int> y0,
                              std::vector<int> y1);
};

struct LossReport {
  double l_lm = 0.0;
  double l_pl = 0.0;
  double total = 0.0;
  double lambda = 1.0;
};

// Mean over masked positions of -log p(target | logits row). The mask marks
// output-token positions; prompt positions stay excluded.
Tensor lm_loss(Tape* tape, const Tensor& logits, std::span<const int> targets,
               const std::vector<bool>& output_mask);

// Length of the longest common prefix of two token sequences.
size_t divergence_index(std::span<const int> y0, std::span<const int> y1);

// (1 / (N - I)) * sum_{i in [I, N)} max(0, -r0_i + r1_i + 1.0).
// Returns an exact zero tensor when I == N.
Tensor preference_loss(Tape* tape, const Tensor& r0, const Tensor& r1,
                       size_t divergence, size_t max_len);

double total_loss(double l_lm, double l_pl, double lambda);

struct ComparisonLossResult {
  Tensor lm;     // scalar
  Tensor pl;     // scalar
  Tensor total;  // scalar, lm + lambda * pl on-tape
  LossReport report;
};

// Runs the two forwards (prompt+y0 and prompt+y1), the LM loss on y0 output
// positions, rewards at the padded output positions of both sequences, and
// assembles the combined objective.
ComparisonLossResult comparison_loss(Tape* tape, const Parameters& params,
                                     const LoraSet* adapters,
                                     const ComparisonBatch& batch,
                                     double lambda, int eos_id);

}  // namespace tim
