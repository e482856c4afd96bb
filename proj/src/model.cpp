#include "tim/model.hpp"

#include <cmath>

#include "tim/error.hpp"
#include "tim/rng.hpp"

namespace tim {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskedLogit = -1e30;

Tensor normal_tensor(Rng& rng, std::vector<size_t> shape, double std_dev) {
  size_t n = 1;
  for (const size_t d : shape) n *= d;
  std::vector<double> values(n);
  for (double& v : values) v = rng.next_normal() * std_dev;
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor causal_mask(size_t len) {
  Tensor mask = Tensor::zeros({len, len});
  for (size_t i = 0; i < len; ++i) {
    for (size_t j = i + 1; j < len; ++j) mask.at(i, j) = kMaskedLogit;
  }
  return mask;
}

// x * W, with the low-rank update folded in when an adapter targets W.
Tensor project(Tape* tape, const Tensor& x, const Tensor& w,
               const LoraSet* adapters, const std::string& name) {
  Tensor out = matmul(tape, x, w);
  if (adapters != nullptr) {
    if (const LoraAdapter* ad = adapters->find(name)) {
      Tensor u = matmul(tape, x, transpose(tape, ad->a));
      Tensor v = matmul(tape, u, transpose(tape, ad->b));
      out = add(tape, out, scale(tape, v, ad->alpha / static_cast<double>(ad->rank)));
    }
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 ||
      d_ff == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (max_seq_len < 2) {
    throw ConfigError("max_seq_len must be at least 2");
  }
}

void Parameters::for_each_named(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("token_embeddings", token_embeddings);
  fn("position_embeddings", position_embeddings);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    LayerParams& layer = layers[l];
    fn(prefix + "ln1_gain", layer.ln1_gain);
    fn(prefix + "ln1_bias", layer.ln1_bias);
    fn(prefix + "wq", layer.wq);
    fn(prefix + "wk", layer.wk);
    fn(prefix + "wv", layer.wv);
    fn(prefix + "wo", layer.wo);
    fn(prefix + "ln2_gain", layer.ln2_gain);
    fn(prefix + "ln2_bias", layer.ln2_bias);
    fn(prefix + "w_ff1", layer.w_ff1);
    fn(prefix + "b_ff1", layer.b_ff1);
    fn(prefix + "w_ff2", layer.w_ff2);
    fn(prefix + "b_ff2", layer.b_ff2);
  }
  fn("final_gain", final_gain);
  fn("final_bias", final_bias);
  fn("lm_head", lm_head);
  fn("reward_head_weight", reward_head_weight);
  fn("reward_head_bias", reward_head_bias);
}

void Parameters::for_each_named(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<Parameters*>(this)->for_each_named(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

Tensor* Parameters::find(const std::string& name) {
  Tensor* found = nullptr;
  for_each_named([&](const std::string& n, Tensor& t) {
    if (n == name) found = &t;
  });
  return found;
}

size_t Parameters::total_parameter_count() const {
  size_t count = 0;
  for_each_named(
      [&count](const std::string&, const Tensor& t) { count += t.size(); });
  return count;
}

bool Parameters::all_finite() const {
  bool ok = true;
  for_each_named([&ok](const std::string&, const Tensor& t) {
    if (!t.all_finite()) ok = false;
  });
  return ok;
}

const LoraAdapter* LoraSet::find(const std::string& target) const {
  for (const LoraAdapter& adapter : adapters) {
    if (adapter.target == target) return &adapter;
  }
  return nullptr;
}

size_t LoraSet::parameter_count() const {
  size_t count = 0;
  for (const LoraAdapter& adapter : adapters) {
    count += adapter.a.size() + adapter.b.size();
  }
  return count;
}

TuningStrategy TuningStrategy::parse(const std::string& name) {
  TuningStrategy s;
  if (name == "full") {
    s.kind = Kind::full;
  } else if (name == "fixemb") {
    s.kind = Kind::fix_emb;
  } else if (name == "lora") {
    s.kind = Kind::lora;
  } else {
    throw ConfigError("unknown tuning strategy: " + name);
  }
  return s;
}

std::string TuningStrategy::name() const {
  switch (kind) {
    case Kind::full:
      return "full";
    case Kind::fix_emb:
      return "fixemb";
    case Kind::lora:
      return "lora";
  }
  return "full";
}

Parameters init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Parameters p;
  p.config = config;
  const size_t d = config.d_model;
  p.token_embeddings = normal_tensor(rng, {config.vocab_size, d}, kInitStd);
  p.position_embeddings =
      normal_tensor(rng, {config.max_seq_len, d}, kInitStd);
  p.layers.resize(config.n_layers);
  for (LayerParams& layer : p.layers) {
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.wq = normal_tensor(rng, {d, d}, kInitStd);
    layer.wk = normal_tensor(rng, {d, d}, kInitStd);
    layer.wv = normal_tensor(rng, {d, d}, kInitStd);
    layer.wo = normal_tensor(rng, {d, d}, kInitStd);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.w_ff1 = normal_tensor(rng, {d, config.d_ff}, kInitStd);
    layer.b_ff1 = Tensor::zeros({config.d_ff}, true);
    layer.w_ff2 = normal_tensor(rng, {config.d_ff, d}, kInitStd);
    layer.b_ff2 = Tensor::zeros({d}, true);
  }
  p.final_gain = Tensor::full({d}, 1.0, true);
  p.final_bias = Tensor::zeros({d}, true);
  p.lm_head = normal_tensor(rng, {d, config.vocab_size}, kInitStd);
  p.reward_head_weight = Tensor::zeros({d}, true);
  p.reward_head_bias = Tensor::zeros({1}, true);
  return p;
}

std::vector<std::string> default_lora_targets(const ModelConfig& config) {
  std::vector<std::string> targets;
  for (size_t l = 0; l < config.n_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      targets.push_back(prefix + w);
    }
  }
  return targets;
}

LoraSet make_lora_adapters(const Parameters& params,
                           const TuningStrategy& strategy, uint64_t seed) {
  if (strategy.kind != TuningStrategy::Kind::lora) return {};
  if (strategy.lora_rank == 0) {
    throw ConfigError("lora rank must be positive");
  }
  std::vector<std::string> targets = strategy.lora_targets.empty()
                                         ? default_lora_targets(params.config)
                                         : strategy.lora_targets;
  Rng rng(seed);
  LoraSet set;
  Parameters& mutable_params = const_cast<Parameters&>(params);
  for (const std::string& target : targets) {
    Tensor* base = mutable_params.find(target);
    if (base == nullptr) {
      throw ConfigError("lora target does not name a parameter: " + target);
    }
    if (base->rank() != 2) {
      throw ConfigError("lora target is not a matrix: " + target);
    }
    const size_t d_in = base->shape()[0];
    const size_t d_out = base->shape()[1];
    LoraAdapter adapter;
    adapter.target = target;
    adapter.rank = strategy.lora_rank;
    adapter.alpha = strategy.lora_alpha;
    adapter.a = normal_tensor(rng, {strategy.lora_rank, d_in}, kInitStd);
    adapter.b = Tensor::zeros({d_out, strategy.lora_rank}, true);
    set.adapters.push_back(std::move(adapter));
  }
  return set;
}

ForwardResult forward(Tape* tape, const Parameters& params,
                      std::span<const int> tokens, const LoraSet* adapters) {
  const ModelConfig& cfg = params.config;
  const size_t len = tokens.size();
  if (len == 0) {
    throw ContractError("forward: empty token sequence");
  }
  if (len > cfg.max_seq_len) {
    throw DataError("sequence length " + std::to_string(len) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (const int id : tokens) {
    if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size) {
      throw DataError("token id " + std::to_string(id) +
                      " outside vocabulary of size " +
                      std::to_string(cfg.vocab_size));
    }
  }
  std::vector<int> positions(len);
  for (size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  Tensor x = add(tape, gather_rows(tape, params.token_embeddings, tokens),
                 gather_rows(tape, params.position_embeddings, positions));
  const Tensor mask = causal_mask(len);
  const size_t d_head = cfg.d_model / cfg.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

  for (size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& layer = params.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    Tensor h =
        layer_norm(tape, x, layer.ln1_gain, layer.ln1_bias, kLayerNormEps);
    Tensor q = project(tape, h, layer.wq, adapters, prefix + "wq");
    Tensor k = project(tape, h, layer.wk, adapters, prefix + "wk");
    Tensor v = project(tape, h, layer.wv, adapters, prefix + "wv");

    Tensor heads;
    for (size_t hh = 0; hh < cfg.n_heads; ++hh) {
      const size_t c0 = hh * d_head;
      const size_t c1 = c0 + d_head;
      Tensor qh = slice_cols(tape, q, c0, c1);
      Tensor kh = slice_cols(tape, k, c0, c1);
      Tensor vh = slice_cols(tape, v, c0, c1);
      Tensor scores =
          scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
      scores = add(tape, scores, mask);
      Tensor attn = softmax_rows(tape, scores);
      Tensor oh = matmul(tape, attn, vh);
      heads = hh == 0 ? oh : concat_cols(tape, heads, oh);
    }
    Tensor att_out = project(tape, heads, layer.wo, adapters, prefix + "wo");
    x = add(tape, x, att_out);

    Tensor h2 =
        layer_norm(tape, x, layer.ln2_gain, layer.ln2_bias, kLayerNormEps);
    Tensor f = relu(
        tape, add_rowwise(tape, matmul(tape, h2, layer.w_ff1), layer.b_ff1));
    Tensor f2 = add_rowwise(tape, matmul(tape, f, layer.w_ff2), layer.b_ff2);
    x = add(tape, x, f2);
  }

  Tensor top =
      layer_norm(tape, x, params.final_gain, params.final_bias, kLayerNormEps);
  Tensor logits = matmul(tape, top, params.lm_head);
  return {logits, top};
}

Tensor reward_scores(Tape* tape, const Parameters& params,
                     const Tensor& top_hidden) {
  if (top_hidden.rank() != 2 ||
      top_hidden.shape()[1] != params.config.d_model) {
    throw ShapeError("reward_scores: hidden width " +
                     Tensor::shape_string(top_hidden.shape()) +
                     " does not match d_model " +
                     std::to_string(params.config.d_model));
  }
  const size_t seq = top_hidden.shape()[0];
  Tensor w_col =
      reshape(tape, params.reward_head_weight, {params.config.d_model, 1});
  Tensor scores = matmul(tape, top_hidden, w_col);  // [seq x 1]
  // Broadcast the scalar bias over the sequence via ones * bias.
  Tensor ones = Tensor::full({seq, 1}, 1.0);
  Tensor bias_col =
      matmul(tape, ones, reshape(tape, params.reward_head_bias, {1, 1}));
  return reshape(tape, add(tape, scores, bias_col), {seq});
}

std::vector<NamedTensor> trainable_parameters(Parameters& params,
                                              const TuningStrategy& strategy,
                                              LoraSet* adapters) {
  std::vector<NamedTensor> result;
  switch (strategy.kind) {
    case TuningStrategy::Kind::full:
      params.for_each_named([&result](const std::string& name, Tensor& t) {
        result.push_back({name, t});
      });
      break;
    case TuningStrategy::Kind::fix_emb:
      params.for_each_named([&result](const std::string& name, Tensor& t) {
        if (name == "token_embeddings" || name == "position_embeddings") {
          return;
        }
        result.push_back({name, t});
      });
      break;
    case TuningStrategy::Kind::lora: {
      if (adapters == nullptr) {
        throw ConfigError("lora strategy requires an adapter set");
      }
      for (LoraAdapter& adapter : adapters->adapters) {
        result.push_back({"lora." + adapter.target + ".a", adapter.a});
        result.push_back({"lora." + adapter.target + ".b", adapter.b});
      }
      result.push_back({"reward_head_weight", params.reward_head_weight});
      result.push_back({"reward_head_bias", params.reward_head_bias});
      break;
    }
  }
  return result;
}

}  // namespace tim
