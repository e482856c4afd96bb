#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "tim/error.hpp"
#include "tim/evaluation.hpp"
#include "tim/rng.hpp"
#include "tim/training.hpp"

using namespace tim;

namespace {

ModelConfig tiny_model(uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 24;
  cfg.max_seq_len = 32;
  cfg.seed = seed;
  return cfg;
}

TrainConfig tiny_train(uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.max_text_len = 32;
  cfg.seed = seed;
  return cfg;
}

std::vector<InstructionRecord> tiny_dataset(size_t n, bool with_bad,
                                            uint64_t seed = 17) {
  SyntheticTaskSpec spec = SyntheticTaskSpec::standard(8, n, seed, false);
  spec.min_len = 2;
  spec.max_len = 4;
  const auto corpus = gen_synthetic_corpus(spec);
  Rng noise(derive_seed(seed, "noise"));
  std::vector<InstructionRecord> records;
  for (const ParallelExample& example : corpus) {
    InstructionRecord record = make_plain(example.source, example.reference);
    if (with_bad) record.bad_output = make_noisy_bad(example.reference, noise);
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<double> flatten_params(const Parameters& params) {
  std::vector<double> flat;
  params.for_each_named([&flat](const std::string&, const Tensor& t) {
    flat.insert(flat.end(), t.values().begin(), t.values().end());
  });
  return flat;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("tokenize_record truncates the output, never the prompt") {
  Vocab vocab = Vocab::build({"a b c d e f g h i j k out1 out2 out3"}, 32);
  InstructionRecord record = make_plain("a b c", "out1 out2 out3");
  // Prompt: 5 instruction words + 3 input words + sep = 9 tokens.
  const TokenizedRecord full = tokenize_record(record, vocab, 32, false);
  const size_t prompt_len = full.prompt_tokens.size();
  CHECK(full.y0_tokens.size() == 4);  // 3 words + eos

  const TokenizedRecord cut = tokenize_record(record, vocab, prompt_len + 2, false);
  CHECK(cut.prompt_tokens.size() == prompt_len);
  CHECK(cut.y0_tokens.size() == 2);

  CHECK_THROWS_AS(tokenize_record(record, vocab, prompt_len, false), DataError);
}

TEST_CASE("train_step: zero learning rate leaves parameters bitwise intact") {
  const auto dataset = tiny_dataset(4, true);
  TrainConfig cfg = tiny_train();
  // train() validates learning_rate > 0; the bare step accepts a null update.
  cfg.learning_rate = 0.0;
  // Build everything manually so the step runs on a fixed batch.
  std::vector<std::string> texts;
  for (const auto& r : dataset) {
    texts.push_back(render_prompt(r));
    texts.push_back(r.output);
    if (r.bad_output) texts.push_back(*r.bad_output);
  }
  Vocab vocab = Vocab::build(texts, 32);
  Parameters params = init_model(tiny_model());
  LoraSet no_adapters;
  auto trainable = trainable_parameters(params, cfg.strategy, &no_adapters);
  OptimizerState state = OptimizerState::init(trainable);

  const std::vector<double> before = flatten_params(params);
  train_step(params, no_adapters, trainable, state, dataset, cfg, vocab);
  const std::vector<double> after = flatten_params(params);
  CHECK(before == after);
}

TEST_CASE("train_step determinism and the use_preference toggle") {
  const auto dataset = tiny_dataset(6, true);
  const auto run = [&](bool use_preference) {
    TrainConfig cfg = tiny_train();
    cfg.use_preference = use_preference;
    std::vector<std::string> texts;
    for (const auto& r : dataset) {
      texts.push_back(render_prompt(r));
      texts.push_back(r.output);
      if (r.bad_output) texts.push_back(*r.bad_output);
    }
    Vocab vocab = Vocab::build(texts, 32);
    Parameters params = init_model(tiny_model());
    LoraSet adapters;
    auto trainable = trainable_parameters(params, cfg.strategy, &adapters);
    OptimizerState state = OptimizerState::init(trainable);
    const LossReport report =
        train_step(params, adapters, trainable, state, dataset, cfg, vocab);
    return std::make_pair(report, flatten_params(params));
  };

  const auto [report1, params1] = run(true);
  const auto [report2, params2] = run(true);
  CHECK(report1.l_lm == report2.l_lm);
  CHECK(report1.l_pl == report2.l_pl);
  CHECK(params1 == params2);

  const auto [report_off, params_off] = run(false);
  CHECK(report_off.l_pl == 0.0);
  CHECK(report_off.total == report_off.l_lm);
  CHECK(params_off != params1);

  // Plain tuning on the same records without bad outputs gives the same
  // update as use_preference=false.
  auto stripped = dataset;
  for (auto& r : stripped) r.bad_output.reset();
  TrainConfig cfg = tiny_train();
  std::vector<std::string> texts;
  for (const auto& r : dataset) {
    texts.push_back(render_prompt(r));
    texts.push_back(r.output);
    if (r.bad_output) texts.push_back(*r.bad_output);
  }
  Vocab vocab = Vocab::build(texts, 32);
  Parameters params = init_model(tiny_model());
  LoraSet adapters;
  auto trainable = trainable_parameters(params, cfg.strategy, &adapters);
  OptimizerState state = OptimizerState::init(trainable);
  train_step(params, adapters, trainable, state, stripped, cfg, vocab);
  CHECK(flatten_params(params) == params_off);
}

TEST_CASE("gradient accumulation: one batch equals summed micro-batches") {
  const auto dataset = tiny_dataset(8, true);
  std::vector<std::string> texts;
  for (const auto& r : dataset) {
    texts.push_back(render_prompt(r));
    texts.push_back(r.output);
    if (r.bad_output) texts.push_back(*r.bad_output);
  }
  Vocab vocab = Vocab::build(texts, 32);
  TrainConfig cfg = tiny_train();
  Parameters params = init_model(tiny_model());
  TuningStrategy full;
  auto trainable = trainable_parameters(params, full, nullptr);
  const size_t lm_count = dataset.size();
  const size_t pl_count = count_preference_records(dataset, cfg);

  const auto grads_for = [&](bool split) {
    for (auto& named : trainable) {
      named.tensor.grad();
      named.tensor.zero_grad();
    }
    const std::span<const InstructionRecord> all(dataset);
    if (split) {
      accumulate_batch_gradients(params, nullptr, all.subspan(0, 4), cfg,
                                 vocab, lm_count, pl_count, 0);
      accumulate_batch_gradients(params, nullptr, all.subspan(4), cfg, vocab,
                                 lm_count, pl_count, 4);
    } else {
      accumulate_batch_gradients(params, nullptr, all, cfg, vocab, lm_count,
                                 pl_count, 0);
    }
    std::vector<double> flat;
    for (auto& named : trainable) {
      flat.insert(flat.end(), named.tensor.grad().begin(),
                  named.tensor.grad().end());
    }
    return flat;
  };

  const std::vector<double> whole = grads_for(false);
  const std::vector<double> micro = grads_for(true);
  REQUIRE(whole.size() == micro.size());
  for (size_t i = 0; i < whole.size(); ++i) {
    CHECK(std::abs(whole[i] - micro[i]) <= 1e-10);
  }
}

TEST_CASE("train: epochs=0 returns the initialization") {
  const auto dataset = tiny_dataset(4, false);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 0;
  const TrainResult result = train(dataset, cfg, tiny_model());
  const Parameters fresh = init_model(tiny_model());
  CHECK(flatten_params(result.checkpoint.params) == flatten_params(fresh));
  CHECK(result.loss_log.empty());

  CHECK_THROWS_AS(train({}, tiny_train(), tiny_model()), ConfigError);
}

TEST_CASE("train: deterministic end to end") {
  const auto dataset = tiny_dataset(10, true);
  TrainConfig cfg = tiny_train(42);
  cfg.epochs = 2;
  const TrainResult a = train(dataset, cfg, tiny_model());
  const TrainResult b = train(dataset, cfg, tiny_model());
  CHECK(flatten_params(a.checkpoint.params) ==
        flatten_params(b.checkpoint.params));
  REQUIRE(a.loss_log.size() == b.loss_log.size());
  for (size_t i = 0; i < a.loss_log.size(); ++i) {
    CHECK(a.loss_log[i].total == b.loss_log[i].total);
  }
}

TEST_CASE("strategy freezes hold over a training run") {
  const auto dataset = tiny_dataset(12, true);

  // FixEmb: embeddings bitwise unchanged.
  {
    TrainConfig cfg = tiny_train(7);
    cfg.strategy.kind = TuningStrategy::Kind::fix_emb;
    cfg.epochs = 2;
    const Parameters fresh = init_model(tiny_model());
    const TrainResult result = train(dataset, cfg, tiny_model());
    CHECK(result.checkpoint.params.token_embeddings.values() ==
          fresh.token_embeddings.values());
    CHECK(result.checkpoint.params.position_embeddings.values() ==
          fresh.position_embeddings.values());
    // Everything else did move.
    CHECK(result.checkpoint.params.lm_head.values() != fresh.lm_head.values());
  }

  // LoRA: every base weight bitwise unchanged; adapters and reward head move.
  {
    TrainConfig cfg = tiny_train(7);
    cfg.strategy.kind = TuningStrategy::Kind::lora;
    cfg.strategy.lora_rank = 2;
    cfg.epochs = 2;
    const Parameters fresh = init_model(tiny_model());
    const TrainResult result = train(dataset, cfg, tiny_model());
    std::vector<const Tensor*> fresh_tensors;
    fresh.for_each_named([&](const std::string&, const Tensor& t) {
      fresh_tensors.push_back(&t);
    });
    size_t index = 0;
    result.checkpoint.params.for_each_named(
        [&](const std::string& name, const Tensor& t) {
          if (name != "reward_head_weight" && name != "reward_head_bias") {
            CHECK(t.values() == fresh_tensors[index]->values());
          }
          ++index;
        });
    bool adapters_moved = false;
    for (const LoraAdapter& adapter : result.checkpoint.adapters.adapters) {
      for (const double v : adapter.b.values()) {
        if (v != 0.0) adapters_moved = true;
      }
    }
    CHECK(adapters_moved);
  }
}

TEST_CASE("lambda=0 on a stripped dataset matches the plain baseline") {
  auto with_bad = tiny_dataset(8, true);
  auto stripped = with_bad;
  for (auto& r : stripped) r.bad_output.reset();

  TrainConfig lambda_zero = tiny_train(5);
  lambda_zero.lambda = 0.0;
  const TrainResult a = train(stripped, lambda_zero, tiny_model());

  TrainConfig baseline = tiny_train(5);
  const TrainResult b = train(stripped, baseline, tiny_model());
  CHECK(flatten_params(a.checkpoint.params) ==
        flatten_params(b.checkpoint.params));
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
  const auto dataset = tiny_dataset(6, true);
  TrainConfig cfg = tiny_train(9);
  cfg.strategy.kind = TuningStrategy::Kind::lora;
  cfg.strategy.lora_rank = 2;
  const TrainResult result = train(dataset, cfg, tiny_model());

  const std::string path = "/tmp/tim_test_ckpt.bin";
  save_checkpoint(result.checkpoint, path);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(flatten_params(loaded.params) ==
        flatten_params(result.checkpoint.params));
  CHECK(loaded.vocab_words == result.checkpoint.vocab_words);
  CHECK(loaded.rng_state == result.checkpoint.rng_state);
  CHECK(loaded.step == result.checkpoint.step);
  CHECK(loaded.train_config.strategy.kind == TuningStrategy::Kind::lora);
  REQUIRE(loaded.adapters.adapters.size() ==
          result.checkpoint.adapters.adapters.size());
  for (size_t i = 0; i < loaded.adapters.adapters.size(); ++i) {
    CHECK(loaded.adapters.adapters[i].a.values() ==
          result.checkpoint.adapters.adapters[i].a.values());
    CHECK(loaded.adapters.adapters[i].b.values() ==
          result.checkpoint.adapters.adapters[i].b.values());
  }

  // Save twice: byte-identical artifacts.
  const std::string copy = "/tmp/tim_test_ckpt2.bin";
  save_checkpoint(result.checkpoint, copy);
  CHECK(file_bytes(path) == file_bytes(copy));

  // Truncation must fail the checksum.
  const std::string bytes = file_bytes(path);
  {
    std::ofstream out("/tmp/tim_test_ckpt_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/tim_test_ckpt_trunc.bin"),
                  CheckpointError);

  // A flipped payload byte must fail the checksum.
  {
    std::string corrupt = bytes;
    corrupt[corrupt.size() / 2] ^= 0x5a;
    std::ofstream out("/tmp/tim_test_ckpt_flip.bin", std::ios::binary);
    out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/tim_test_ckpt_flip.bin"),
                  CheckpointError);

  // A bumped version must be rejected even with a fixed checksum.
  {
    std::string versioned = bytes;
    versioned[8] = 2;  // version byte after the magic
    const uint64_t checksum =
        fnv1a64(std::string_view(versioned.data(), versioned.size() - 8));
    for (int i = 0; i < 8; ++i) {
      versioned[versioned.size() - 8 + static_cast<size_t>(i)] =
          static_cast<char>((checksum >> (8 * i)) & 0xff);
    }
    std::ofstream out("/tmp/tim_test_ckpt_ver.bin", std::ios::binary);
    out.write(versioned.data(), static_cast<std::streamsize>(versioned.size()));
  }
  try {
    load_checkpoint("/tmp/tim_test_ckpt_ver.bin");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  for (const char* p :
       {"/tmp/tim_test_ckpt.bin", "/tmp/tim_test_ckpt2.bin",
        "/tmp/tim_test_ckpt_trunc.bin", "/tmp/tim_test_ckpt_flip.bin",
        "/tmp/tim_test_ckpt_ver.bin"}) {
    std::remove(p);
  }
}

TEST_CASE("loss log CSV format") {
  const std::string path = "/tmp/tim_test_loss.csv";
  write_loss_log(path, {{1, 0.5, 1.0, 1.5}, {2, 0.25, 0.5, 0.75}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,l_lm,l_pl,total");
  std::getline(in, line);
  CHECK(line == "1,0.5,1,1.5");
  std::remove(path.c_str());
}
