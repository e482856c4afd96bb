#include "tim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tim/error.hpp"

namespace tim {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr char kCheckpointMagic[9] = "TIMCKPT1";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (max_text_len < 2) throw ConfigError("max_text_len must be at least 2");
  if (grad_clip_norm.has_value() && *grad_clip_norm <= 0.0) {
    throw ConfigError("grad_clip_norm must be positive when set");
  }
}

OptimizerState OptimizerState::init(
    const std::vector<NamedTensor>& trainable) {
  OptimizerState state;
  state.slots.resize(trainable.size());
  for (size_t i = 0; i < trainable.size(); ++i) {
    state.slots[i].m.assign(trainable[i].tensor.size(), 0.0);
    state.slots[i].v.assign(trainable[i].tensor.size(), 0.0);
  }
  return state;
}

TokenizedRecord tokenize_record(const InstructionRecord& record,
                                const Vocab& vocab, size_t max_text_len,
                                bool use_preference) {
  TokenizedRecord out;
  out.prompt_tokens = vocab.encode_prompt(render_prompt(record));
  if (out.prompt_tokens.size() + 1 > max_text_len) {
    throw DataError("prompt of " + std::to_string(out.prompt_tokens.size()) +
                    " tokens leaves no room for output within max_text_len " +
                    std::to_string(max_text_len));
  }
  const size_t budget = max_text_len - out.prompt_tokens.size();
  out.y0_tokens = vocab.encode_output(record.output);
  if (out.y0_tokens.size() > budget) out.y0_tokens.resize(budget);
  if (use_preference && record.bad_output.has_value()) {
    std::vector<int> y1 = vocab.encode_output(*record.bad_output);
    if (y1.size() > budget) y1.resize(budget);
    out.y1_tokens = std::move(y1);
    out.preference = true;
  }
  return out;
}

size_t count_preference_records(std::span<const InstructionRecord> records,
                                const TrainConfig& cfg) {
  if (!cfg.use_preference) return 0;
  size_t count = 0;
  for (const InstructionRecord& r : records) {
    if (r.bad_output.has_value()) ++count;
  }
  return count;
}

GradientTotals accumulate_batch_gradients(
    const Parameters& params, const LoraSet* adapters,
    std::span<const InstructionRecord> records, const TrainConfig& cfg,
    const Vocab& vocab, size_t lm_count, size_t pl_count,
    size_t record_index_base) {
  if (lm_count == 0) {
    throw ContractError("accumulate_batch_gradients: lm_count is zero");
  }
  GradientTotals totals;
  for (size_t r = 0; r < records.size(); ++r) {
    const TokenizedRecord tok =
        tokenize_record(records[r], vocab, cfg.max_text_len,
                        cfg.use_preference);
    Tape tape;
    Tensor weighted;
    double lm_value = 0.0;
    double pl_value = 0.0;
    if (tok.preference) {
      if (pl_count == 0) {
        throw ContractError(
            "accumulate_batch_gradients: preference record seen but pl_count "
            "is zero");
      }
      const ComparisonBatch batch = ComparisonBatch::make(
          tok.prompt_tokens, tok.y0_tokens, *tok.y1_tokens);
      const ComparisonLossResult loss = comparison_loss(
          &tape, params, adapters, batch, cfg.lambda, Vocab::kEos);
      lm_value = loss.report.l_lm;
      pl_value = loss.report.l_pl;
      weighted = add(
          &tape, scale(&tape, loss.lm, 1.0 / static_cast<double>(lm_count)),
          scale(&tape, loss.pl,
                cfg.lambda / static_cast<double>(pl_count)));
    } else {
      std::vector<int> seq = tok.prompt_tokens;
      seq.insert(seq.end(), tok.y0_tokens.begin(), tok.y0_tokens.end());
      const ForwardResult fwd = forward(&tape, params, seq, adapters);
      std::vector<int> targets(seq.size(), 0);
      for (size_t i = 0; i + 1 < seq.size(); ++i) targets[i] = seq[i + 1];
      std::vector<bool> mask(seq.size(), false);
      for (size_t i = 0; i < tok.y0_tokens.size(); ++i) {
        mask[tok.prompt_tokens.size() - 1 + i] = true;
      }
      Tensor lm = lm_loss(&tape, fwd.logits, targets, mask);
      lm_value = lm.scalar_value();
      weighted = scale(&tape, lm, 1.0 / static_cast<double>(lm_count));
    }
    if (!std::isfinite(lm_value) || !std::isfinite(pl_value)) {
      throw NumericError("non-finite loss at record index " +
                         std::to_string(record_index_base + r));
    }
    tape.backward(weighted);
    totals.lm_sum += lm_value;
    totals.pl_sum += pl_value;
  }
  return totals;
}

double clip_gradients(std::vector<NamedTensor>& trainable, double max_norm) {
  double sum_sq = 0.0;
  for (NamedTensor& named : trainable) {
    for (const double g : named.tensor.grad()) sum_sq += g * g;
  }
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (NamedTensor& named : trainable) {
      for (double& g : named.tensor.grad()) g *= factor;
    }
  }
  return norm;
}

void apply_adam(std::vector<NamedTensor>& trainable, OptimizerState& state,
                const TrainConfig& cfg) {
  if (state.slots.size() != trainable.size()) {
    throw ContractError("optimizer state does not mirror the trainable set");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(kBeta1, t);
  const double bias2 = 1.0 - std::pow(kBeta2, t);
  for (size_t i = 0; i < trainable.size(); ++i) {
    Tensor& tensor = trainable[i].tensor;
    OptimizerState::Slot& slot = state.slots[i];
    if (slot.m.size() != tensor.size()) {
      throw ContractError("optimizer slot shape mismatch for " +
                          trainable[i].name);
    }
    std::vector<double>& values = tensor.values();
    std::vector<double>& grads = tensor.grad();
    for (size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      slot.m[j] = kBeta1 * slot.m[j] + (1.0 - kBeta1) * g;
      slot.v[j] = kBeta2 * slot.v[j] + (1.0 - kBeta2) * g * g;
      const double m_hat = slot.m[j] / bias1;
      const double v_hat = slot.v[j] / bias2;
      values[j] -= cfg.learning_rate *
                   (m_hat / (std::sqrt(v_hat) + kAdamEps) +
                    cfg.weight_decay * values[j]);
    }
  }
}

LossReport train_step(Parameters& params, LoraSet& adapters,
                      std::vector<NamedTensor>& trainable,
                      OptimizerState& state,
                      std::span<const InstructionRecord> batch,
                      const TrainConfig& cfg, const Vocab& vocab) {
  if (batch.empty()) {
    throw ContractError("train_step: empty batch");
  }
  for (NamedTensor& named : trainable) {
    named.tensor.grad();
    named.tensor.zero_grad();
  }
  const size_t lm_count = batch.size();
  const size_t pl_count = count_preference_records(batch, cfg);
  const GradientTotals totals = accumulate_batch_gradients(
      params, adapters.adapters.empty() ? nullptr : &adapters, batch, cfg,
      vocab, lm_count, pl_count);
  if (cfg.grad_clip_norm.has_value()) {
    clip_gradients(trainable, *cfg.grad_clip_norm);
  }
  apply_adam(trainable, state, cfg);
  LossReport report;
  report.l_lm = totals.lm_sum / static_cast<double>(lm_count);
  report.l_pl =
      pl_count == 0 ? 0.0 : totals.pl_sum / static_cast<double>(pl_count);
  report.lambda = cfg.lambda;
  report.total = total_loss(report.l_lm, report.l_pl, cfg.lambda);
  return report;
}

TrainResult train(const std::vector<InstructionRecord>& dataset,
                  const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::string& config_hash) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) {
    throw ConfigError("training dataset is empty");
  }
  std::vector<InstructionRecord> records;
  records.reserve(dataset.size());
  for (const InstructionRecord& record : dataset) {
    if (cfg.kind_toggles.count(record.kind)) records.push_back(record);
  }
  if (records.empty()) {
    throw ConfigError("kind toggles removed every record from the dataset");
  }

  std::vector<std::string> texts;
  texts.reserve(records.size() * 2);
  for (const InstructionRecord& record : records) {
    texts.push_back(render_prompt(record));
    texts.push_back(record.output);
    if (record.bad_output.has_value()) texts.push_back(*record.bad_output);
  }
  Vocab vocab = Vocab::build(texts, model_cfg.vocab_size);

  Parameters params = init_model(model_cfg);
  LoraSet adapters = make_lora_adapters(
      params, cfg.strategy, derive_seed(cfg.seed, "lora.init"));
  if (cfg.strategy.kind == TuningStrategy::Kind::lora) {
    // Base weights and embeddings stay frozen.
    params.for_each_named(
        [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
    params.reward_head_weight.set_requires_grad(true);
    params.reward_head_bias.set_requires_grad(true);
  } else if (cfg.strategy.kind == TuningStrategy::Kind::fix_emb) {
    params.token_embeddings.set_requires_grad(false);
    params.position_embeddings.set_requires_grad(false);
  }
  std::vector<NamedTensor> trainable =
      trainable_parameters(params, cfg.strategy, &adapters);
  OptimizerState state = OptimizerState::init(trainable);

  Rng train_rng(derive_seed(cfg.seed, "train"));
  std::vector<LossRow> loss_log;
  size_t step = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    train_rng.shuffle(order);
    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<InstructionRecord> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(records[order[i]]);
      const LossReport report =
          train_step(params, adapters, trainable, state, batch, cfg, vocab);
      ++step;
      loss_log.push_back({step, report.l_lm, report.l_pl, report.total});
    }
  }

  TrainResult result;
  result.checkpoint.model_config = model_cfg;
  result.checkpoint.train_config = cfg;
  result.checkpoint.params = std::move(params);
  result.checkpoint.adapters = std::move(adapters);
  result.checkpoint.vocab_words = vocab.words();
  result.checkpoint.rng_state = train_rng.state();
  result.checkpoint.step = step;
  result.checkpoint.config_hash = config_hash;
  result.loss_log = std::move(loss_log);
  result.vocab = std::move(vocab);
  return result;
}

// --- config serialization ----------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["vocab_size"] = cfg.vocab_size;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["n_layers"] = cfg.n_layers;
  j["d_ff"] = cfg.d_ff;
  j["max_seq_len"] = cfg.max_seq_len;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<size_t>();
  cfg.d_model = j.at("d_model").get<size_t>();
  cfg.n_heads = j.at("n_heads").get<size_t>();
  cfg.n_layers = j.at("n_layers").get<size_t>();
  cfg.d_ff = j.at("d_ff").get<size_t>();
  cfg.max_seq_len = j.at("max_seq_len").get<size_t>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["max_text_len"] = cfg.max_text_len;
  j["lambda"] = cfg.lambda;
  j["weight_decay"] = cfg.weight_decay;
  j["strategy"] = cfg.strategy.name();
  j["lora_rank"] = cfg.strategy.lora_rank;
  j["lora_alpha"] = cfg.strategy.lora_alpha;
  j["lora_targets"] = cfg.strategy.lora_targets;
  j["seed"] = cfg.seed;
  if (cfg.grad_clip_norm.has_value()) {
    j["grad_clip_norm"] = *cfg.grad_clip_norm;
  } else {
    j["grad_clip_norm"] = nullptr;
  }
  std::vector<std::string> kinds;
  for (const auto kind : cfg.kind_toggles) {
    kinds.push_back(InstructionRecord::kind_name(kind));
  }
  std::sort(kinds.begin(), kinds.end());
  j["kinds"] = kinds;
  j["use_preference"] = cfg.use_preference;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<size_t>();
  cfg.epochs = j.at("epochs").get<size_t>();
  cfg.max_text_len = j.at("max_text_len").get<size_t>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.strategy = TuningStrategy::parse(j.at("strategy").get<std::string>());
  cfg.strategy.lora_rank = j.at("lora_rank").get<size_t>();
  cfg.strategy.lora_alpha = j.at("lora_alpha").get<double>();
  cfg.strategy.lora_targets =
      j.at("lora_targets").get<std::vector<std::string>>();
  cfg.seed = j.at("seed").get<uint64_t>();
  if (j.at("grad_clip_norm").is_null()) {
    cfg.grad_clip_norm = std::nullopt;
  } else {
    cfg.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  }
  cfg.kind_toggles.clear();
  for (const auto& name : j.at("kinds")) {
    cfg.kind_toggles.insert(
        InstructionRecord::parse_kind(name.get<std::string>()));
  }
  cfg.use_preference = j.at("use_preference").get<bool>();
  return cfg;
}

// --- checkpoint container ----------------------------------------------

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& data, size_t offset) : data_(data), pos_(offset) {}

  uint32_t u32() {
    require(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    require(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string bytes(size_t n) {
    require(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }

 private:
  void require(size_t n) const {
    if (pos_ + n > data_.size()) {
      throw CheckpointError("checkpoint is truncated");
    }
  }

  const std::string& data_;
  size_t pos_;
};

void append_tensor(std::string& out, const std::string& name,
                   const Tensor& tensor) {
  put_u64(out, name.size());
  out += name;
  put_u32(out, static_cast<uint32_t>(tensor.shape().size()));
  for (const size_t d : tensor.shape()) put_u64(out, d);
  for (const double v : tensor.values()) put_f64(out, v);
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  nlohmann::json header;
  header["model_config"] =
      nlohmann::json::parse(model_config_to_json(checkpoint.model_config));
  header["train_config"] =
      nlohmann::json::parse(train_config_to_json(checkpoint.train_config));
  header["vocab"] = checkpoint.vocab_words;
  header["rng_state"] = checkpoint.rng_state;
  header["step"] = checkpoint.step;
  header["config_hash"] = checkpoint.config_hash;
  nlohmann::json lora = nlohmann::json::array();
  for (const LoraAdapter& adapter : checkpoint.adapters.adapters) {
    lora.push_back({{"target", adapter.target},
                    {"rank", adapter.rank},
                    {"alpha", adapter.alpha}});
  }
  header["lora"] = lora;
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(header_text.size() + 1024);
  out += kCheckpointMagic;
  put_u32(out, checkpoint.version);
  put_u64(out, header_text.size());
  out += header_text;

  size_t tensor_count = 0;
  checkpoint.params.for_each_named(
      [&tensor_count](const std::string&, const Tensor&) { ++tensor_count; });
  tensor_count += 2 * checkpoint.adapters.adapters.size();
  put_u64(out, tensor_count);
  checkpoint.params.for_each_named(
      [&out](const std::string& name, const Tensor& tensor) {
        append_tensor(out, name, tensor);
      });
  for (const LoraAdapter& adapter : checkpoint.adapters.adapters) {
    append_tensor(out, "lora." + adapter.target + ".a", adapter.a);
    append_tensor(out, "lora." + adapter.target + ".b", adapter.b);
  }
  put_u64(out, fnv1a64(out));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot write checkpoint file: " + tmp);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw DataError("failed writing checkpoint file: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move checkpoint into place: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open checkpoint file: " + path);
  std::stringstream buffer;
  buffer << file.rdbuf();
  const std::string data = buffer.str();
  const size_t magic_len = std::strlen(kCheckpointMagic);
  if (data.size() < magic_len + 4 + 8 + 8) {
    throw CheckpointError("checkpoint is truncated");
  }
  if (data.compare(0, magic_len, kCheckpointMagic) != 0) {
    throw CheckpointError("bad checkpoint magic; not a checkpoint file");
  }
  // Verify the trailing checksum before trusting any content.
  Reader tail(data, data.size() - 8);
  const uint64_t stored = tail.u64();
  const uint64_t computed =
      fnv1a64(std::string_view(data.data(), data.size() - 8));
  if (stored != computed) {
    throw CheckpointError("checkpoint checksum mismatch; file is corrupt");
  }

  Reader reader(data, magic_len);
  Checkpoint checkpoint;
  checkpoint.version = reader.u32();
  if (checkpoint.version != 1) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(checkpoint.version));
  }
  const uint64_t header_len = reader.u64();
  const std::string header_text = reader.bytes(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint header: ") +
                          e.what());
  }
  checkpoint.model_config =
      model_config_from_json(header.at("model_config").dump());
  checkpoint.train_config =
      train_config_from_json(header.at("train_config").dump());
  checkpoint.vocab_words =
      header.at("vocab").get<std::vector<std::string>>();
  const auto rng_words = header.at("rng_state").get<std::vector<uint64_t>>();
  if (rng_words.size() != 4) {
    throw CheckpointError("invalid rng state in checkpoint header");
  }
  std::copy(rng_words.begin(), rng_words.end(), checkpoint.rng_state.begin());
  checkpoint.step = header.at("step").get<uint64_t>();
  checkpoint.config_hash = header.at("config_hash").get<std::string>();

  checkpoint.params = init_model(checkpoint.model_config);
  for (const auto& entry : header.at("lora")) {
    LoraAdapter adapter;
    adapter.target = entry.at("target").get<std::string>();
    adapter.rank = entry.at("rank").get<size_t>();
    adapter.alpha = entry.at("alpha").get<double>();
    checkpoint.adapters.adapters.push_back(std::move(adapter));
  }

  const uint64_t tensor_count = reader.u64();
  for (uint64_t i = 0; i < tensor_count; ++i) {
    const uint64_t name_len = reader.u64();
    const std::string name = reader.bytes(name_len);
    const uint32_t ndim = reader.u32();
    std::vector<size_t> shape(ndim);
    size_t total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = reader.u64();
      total *= shape[d];
    }
    std::vector<double> values(total);
    for (size_t v = 0; v < total; ++v) values[v] = reader.f64();
    Tensor tensor(shape, std::move(values), true);

    if (name.rfind("lora.", 0) == 0) {
      const bool is_a = name.size() > 2 && name.substr(name.size() - 2) == ".a";
      const std::string target = name.substr(5, name.size() - 7);
      bool placed = false;
      for (LoraAdapter& adapter : checkpoint.adapters.adapters) {
        if (adapter.target == target) {
          (is_a ? adapter.a : adapter.b) = tensor;
          placed = true;
          break;
        }
      }
      if (!placed) {
        throw CheckpointError("checkpoint tensor for unknown adapter: " + name);
      }
      continue;
    }
    Tensor* slot = checkpoint.params.find(name);
    if (slot == nullptr) {
      throw CheckpointError("checkpoint contains unknown tensor: " + name);
    }
    if (slot->shape() != tensor.shape()) {
      throw CheckpointError("checkpoint tensor " + name +
                            " has unexpected shape " +
                            Tensor::shape_string(tensor.shape()));
    }
    slot->values() = tensor.values();
  }
  for (const LoraAdapter& adapter : checkpoint.adapters.adapters) {
    if (adapter.a.size() == 0 || adapter.b.size() == 0) {
      throw CheckpointError("checkpoint adapter " + adapter.target +
                            " is missing tensors");
    }
  }
  return checkpoint;
}

void write_loss_log(const std::string& path,
                    const std::vector<LossRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write loss log: " + path);
  out << "step,l_lm,l_pl,total\n";
  for (const LossRow& row : rows) {
    out << row.step << "," << format_double(row.l_lm) << ","
        << format_double(row.l_pl) << "," << format_double(row.total) << "\n";
  }
}

}  // namespace tim
