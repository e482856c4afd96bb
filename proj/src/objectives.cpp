#include "tim/objectives.hpp"

#include <algorithm>
#include <string>

#include "tim/error.hpp"

namespace tim {

ComparisonBatch ComparisonBatch::make(std::vector<int> prompt,
                                      std::vector<int> y0,
                                      std::vector<int> y1) {
  ComparisonBatch batch;
  batch.divergence = divergence_index(y0, y1);
  batch.max_len = std::max(y0.size(), y1.size());
  batch.prompt_tokens = std::move(prompt);
  batch.y0_tokens = std::move(y0);
  batch.y1_tokens = std::move(y1);
  return batch;
}

Tensor lm_loss(Tape* tape, const Tensor& logits, std::span<const int> targets,
               const std::vector<bool>& output_mask) {
  if (logits.rank() != 2) {
    throw ShapeError("lm_loss: logits must be 2-d, got " +
                     Tensor::shape_string(logits.shape()));
  }
  const size_t seq = logits.shape()[0];
  const size_t vocab = logits.shape()[1];
  if (targets.size() != seq || output_mask.size() != seq) {
    throw ContractError("lm_loss: targets/mask length must equal " +
                        std::to_string(seq));
  }
  size_t masked = 0;
  for (size_t i = 0; i < seq; ++i) {
    if (!output_mask[i]) continue;
    ++masked;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= vocab) {
      throw ContractError("lm_loss: target id " + std::to_string(targets[i]) +
                          " at masked position " + std::to_string(i) +
                          " outside vocab");
    }
  }
  if (masked == 0) {
    throw ContractError("lm_loss: output mask selects no positions");
  }
  Tensor log_probs = log_elem(tape, softmax_rows(tape, logits));
  // One-hot selector over the masked targets; constant, carries no gradient.
  Tensor selector = Tensor::zeros({seq, vocab});
  for (size_t i = 0; i < seq; ++i) {
    if (output_mask[i]) {
      selector.at(i, static_cast<size_t>(targets[i])) = 1.0;
    }
  }
  Tensor picked = sum_all(tape, mul(tape, log_probs, selector));
  return scale(tape, picked, -1.0 / static_cast<double>(masked));
}

size_t divergence_index(std::span<const int> y0, std::span<const int> y1) {
  const size_t limit = std::min(y0.size(), y1.size());
  size_t i = 0;
  while (i < limit && y0[i] == y1[i]) ++i;
  return i;
}

Tensor preference_loss(Tape* tape, const Tensor& r0, const Tensor& r1,
                       size_t divergence, size_t max_len) {
  if (divergence > max_len) {
    throw ContractError("preference_loss: divergence index " +
                        std::to_string(divergence) + " exceeds max length " +
                        std::to_string(max_len));
  }
  if (r0.size() != max_len || r1.size() != max_len) {
    throw ContractError("preference_loss: reward sequences must have length " +
                        std::to_string(max_len));
  }
  if (divergence == max_len) {
    return Tensor::scalar(0.0);
  }
  Tensor margin = add_scalar(tape, add(tape, scale(tape, r0, -1.0), r1), 1.0);
  Tensor hinge = relu(tape, margin);
  // Positions before the divergence index do not contribute.
  Tensor window = Tensor::zeros({max_len});
  for (size_t i = divergence; i < max_len; ++i) window.at(i) = 1.0;
  Tensor summed = sum_all(tape, mul(tape, hinge, window));
  return scale(tape, summed,
               1.0 / static_cast<double>(max_len - divergence));
}

double total_loss(double l_lm, double l_pl, double lambda) {
  if (lambda < 0.0) {
    throw ConfigError("lambda must be non-negative");
  }
  return l_lm + lambda * l_pl;
}

namespace {

std::vector<int> pad_to(const std::vector<int>& tokens, size_t len, int pad) {
  std::vector<int> out = tokens;
  out.resize(len, pad);
  return out;
}

}  // namespace

ComparisonLossResult comparison_loss(Tape* tape, const Parameters& params,
                                     const LoraSet* adapters,
                                     const ComparisonBatch& batch,
                                     double lambda, int eos_id) {
  if (lambda < 0.0) {
    throw ConfigError("lambda must be non-negative");
  }
  if (batch.y0_tokens.empty()) {
    throw ContractError("comparison_loss: empty preferred output");
  }
  const size_t prompt_len = batch.prompt_tokens.size();
  if (prompt_len == 0) {
    throw ContractError("comparison_loss: empty prompt");
  }
  const size_t n = batch.max_len;

  // The shorter output is padded with end-of-sequence so a hidden state
  // exists for every position in [0, N).
  const std::vector<int> y0p = pad_to(batch.y0_tokens, n, eos_id);
  const std::vector<int> y1p = pad_to(batch.y1_tokens, n, eos_id);

  std::vector<int> seq0 = batch.prompt_tokens;
  seq0.insert(seq0.end(), y0p.begin(), y0p.end());
  std::vector<int> seq1 = batch.prompt_tokens;
  seq1.insert(seq1.end(), y1p.begin(), y1p.end());

  ForwardResult f0 = forward(tape, params, seq0, adapters);

  // Position i predicts token i+1; mask positions whose target is a true
  // y0 token (not padding).
  const size_t seq0_len = seq0.size();
  std::vector<int> targets(seq0_len, 0);
  for (size_t i = 0; i + 1 < seq0_len; ++i) targets[i] = seq0[i + 1];
  std::vector<bool> mask(seq0_len, false);
  for (size_t i = 0; i < batch.y0_tokens.size(); ++i) {
    mask[prompt_len - 1 + i] = true;
  }
  Tensor lm = lm_loss(tape, f0.logits, targets, mask);

  Tensor pl;
  if (batch.divergence == n) {
    pl = Tensor::scalar(0.0);
  } else {
    ForwardResult f1 = forward(tape, params, seq1, adapters);
    Tensor scores0 = reward_scores(tape, params, f0.top_hidden);
    Tensor scores1 = reward_scores(tape, params, f1.top_hidden);
    Tensor r0 = reshape(
        tape,
        slice_rows(tape, reshape(tape, scores0, {seq0_len, 1}), prompt_len,
                   prompt_len + n),
        {n});
    Tensor r1 = reshape(
        tape,
        slice_rows(tape, reshape(tape, scores1, {seq1.size(), 1}), prompt_len,
                   prompt_len + n),
        {n});
    pl = preference_loss(tape, r0, r1, batch.divergence, n);
  }

  Tensor total = add(tape, lm, scale(tape, pl, lambda));
  ComparisonLossResult result;
  result.lm = lm;
  result.pl = pl;
  result.total = total;
  result.report.l_lm = lm.scalar_value();
  result.report.l_pl = pl.scalar_value();
  result.report.lambda = lambda;
  result.report.total = total_loss(result.report.l_lm, result.report.l_pl,
                                   lambda);
  return result;
}

}  // namespace tim
