#include <doctest.h>

#include <cmath>
#include <cstring>

#include "inject/archive.hpp"
#include "inject/encoder.hpp"
#include "inject/errors.hpp"
#include "inject/gradcheck.hpp"
#include "inject/ops.hpp"
#include "test_support.hpp"

using namespace inject;
using inject::testing::random_batch;
using inject::testing::random_tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.hidden_size = 8;
  cfg.ff_size = 12;
  cfg.max_seq_len = 6;
  cfg.vocab_size = 11;
  cfg.init_std = 0.3;
  return cfg;
}

void fill(Tensor t, double value) {
  for (double& v : t.mutable_values()) v = value;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

Mask full_mask(std::size_t batch, std::size_t len) { return Mask{{batch, 1, 1, len}, std::vector<std::uint8_t>(batch * len, 1)}; }

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig cfg = small_config();
  cfg.hidden_size = 9;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = small_config();
  cfg.num_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = small_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("embedding examples") {
  const EncoderConfig cfg = small_config();
  Rng rng(1);
  Encoder enc(cfg, rng);
  const EmbeddingParams& p = enc.embeddings();
  fill(p.word, 0.0);
  fill(p.position, 0.0);
  fill(p.segment, 0.0);
  Tensor bias = p.norm.bias;
  for (std::size_t i = 0; i < bias.numel(); ++i) bias.mutable_values()[i] = 0.1 * static_cast<double>(i);
  ForwardMode mode;
  TokenBatch b = random_batch(rng, 2, 5, cfg.vocab_size);
  const Tensor x = embed(b, p, cfg, mode);
  CHECK(x.shape() == Shape{2, 5, 8});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.values()[i] == bias.values()[i % 8]);

  Encoder fresh(cfg, rng);
  TokenBatch twice = random_batch(rng, 1, 5, cfg.vocab_size);
  twice.batch = 2;
  twice.ids.insert(twice.ids.end(), twice.ids.begin(), twice.ids.end());
  twice.segment_ids.insert(twice.segment_ids.end(), twice.segment_ids.begin(), twice.segment_ids.end());
  twice.mask.insert(twice.mask.end(), twice.mask.begin(), twice.mask.end());
  const Tensor e = embed(twice, fresh.embeddings(), cfg, mode);
  CHECK(std::memcmp(e.values().data(), e.values().data() + 40, 40 * sizeof(double)) == 0);

  TokenBatch bad = b;
  bad.ids[3] = cfg.vocab_size;
  CHECK_THROWS_AS(embed(bad, fresh.embeddings(), cfg, mode), IndexError);
  TokenBatch long_batch = random_batch(rng, 1, 7, cfg.vocab_size);
  CHECK_THROWS_AS(embed(long_batch, fresh.embeddings(), cfg, mode), DimensionError);
}

TEST_CASE("embedding gradients match finite differences") {
  const EncoderConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    Encoder enc(cfg, rng);
    const TokenBatch b = random_batch(rng, 2, 5, cfg.vocab_size);
    const Tensor probe = random_tensor(rng, {2, 5, 8}, false);
    auto loss = [&] {
      ForwardMode mode;
      return ops::sum(ops::mul(embed(b, enc.embeddings(), cfg, mode), probe));
    };
    const auto& p = enc.embeddings();
    GradCheckOptions opt;
    opt.tolerance = 1e-5;
    const auto report = finite_diff_check(loss, {{"word", p.word}, {"position", p.position}, {"segment", p.segment}}, opt);
    CHECK(report.passed);
  }
}

TEST_CASE("attention examples") {
  EncoderConfig cfg = small_config();
  cfg.num_heads = 1;
  Rng rng(2);
  const AttentionParams p = make_attention(cfg, rng);
  ForwardMode mode;

  const Tensor one = random_tensor(rng, {1, 1, 8}, false);
  const Tensor q = random_tensor(rng, {1, 3, 8}, false);
  const AttentionResult single = multi_head_attention(q, one, full_mask(1, 1), p, cfg, mode);
  const Tensor projected = p.output(p.value(one));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(single.out.values()[i * 8 + c] == doctest::Approx(projected.values()[c]).epsilon(1e-14));

  // Zero query weights make every score equal: the output is the mean value.
  AttentionParams flat = make_attention(cfg, rng);
  fill(flat.query.weight, 0.0);
  fill(flat.query.bias, 0.0);
  const Tensor kv = random_tensor(rng, {1, 4, 8}, false);
  Mask mask{{1, 1, 1, 4}, {1, 1, 0, 1}};
  const AttentionResult uniform = multi_head_attention(q, kv, mask, flat, cfg, mode);
  const Tensor values = flat.value(kv);
  std::vector<double> mean(8, 0.0);
  for (std::size_t pos : {0u, 1u, 3u})
    for (std::size_t c = 0; c < 8; ++c) mean[c] += values.values()[pos * 8 + c] / 3.0;
  const Tensor expected = flat.output(Tensor::from({1, 1, 8}, mean));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(uniform.out.values()[i * 8 + c] == doctest::Approx(expected.values()[c]).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) CHECK(uniform.weights.values()[i * 4 + 2] == 0.0);

  CHECK_THROWS_AS(multi_head_attention(q, kv, full_mask(1, 3), p, cfg, mode), DimensionError);
  CHECK_THROWS_AS(multi_head_attention(q, random_tensor(rng, {1, 4, 6}, false), full_mask(1, 4), p, cfg, mode),
                  DimensionError);
}

TEST_CASE("attention weights are distributions over unmasked keys") {
  const EncoderConfig cfg = small_config();
  Rng rng(3);
  const AttentionParams p = make_attention(cfg, rng);
  ForwardMode mode;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t batch = 1 + rng.below(3), q_len = 1 + rng.below(5), kv_len = 1 + rng.below(6);
    const Tensor q = random_tensor(rng, {batch, q_len, 8}, false, 2.0);
    const Tensor kv = random_tensor(rng, {batch, kv_len, 8}, false, 2.0);
    Mask mask{{batch, 1, 1, kv_len}, {}};
    for (std::size_t i = 0; i < batch * kv_len; ++i) mask.keep.push_back(i % kv_len == 0 || rng.below(3) != 0);
    const AttentionResult r = multi_head_attention(q, kv, mask, p, cfg, mode);
    CHECK(r.weights.shape() == Shape{batch, 2, q_len, kv_len});
    for (std::size_t row = 0; row < batch * 2 * q_len; ++row) {
      const std::size_t b = row / (2 * q_len);
      double total = 0.0;
      for (std::size_t k = 0; k < kv_len; ++k) {
        const double w = r.weights.values()[row * kv_len + k];
        CHECK(w >= 0.0);
        if (!mask.keep[b * kv_len + k]) CHECK(w == 0.0);
        total += w;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("encoder layer examples") {
  const EncoderConfig cfg = small_config();
  Rng rng(4);
  EncoderLayerParams p{make_attention(cfg, rng), make_feed_forward(cfg, rng)};
  fill(p.attention.output.weight, 0.0);
  fill(p.attention.output.bias, 0.0);
  fill(p.ffn.output.weight, 0.0);
  fill(p.ffn.output.bias, 0.0);
  ForwardMode mode;
  const Tensor x = random_tensor(rng, {2, 5, 8}, false);
  const LayerActivations act = encoder_layer_forward(x, full_mask(2, 5), p, cfg, mode);
  const Tensor expected = p.ffn.norm(p.attention.norm(x));
  CHECK(same_bits(act.hidden, expected));
  CHECK(act.hidden.shape() == x.shape());
  CHECK(act.self_attn_out.shape() == x.shape());
}

TEST_CASE("encoder layer gradients match finite differences") {
  const EncoderConfig cfg = small_config();
  Rng rng(5);
  EncoderLayerParams p{make_attention(cfg, rng), make_feed_forward(cfg, rng)};
  const Tensor x = random_tensor(rng, {2, 4, 8});
  const Tensor probe = random_tensor(rng, {2, 4, 8}, false);
  Mask mask{{2, 1, 1, 4}, {1, 1, 1, 1, 1, 1, 0, 0}};
  auto loss = [&] {
    ForwardMode mode;
    return ops::sum(ops::mul(encoder_layer_forward(x, mask, p, cfg, mode).hidden, probe));
  };
  std::vector<NamedTensor> params{{"x", x}};
  append_params(params, "attention.", p.attention);
  append_params(params, "ffn.", p.ffn);
  const auto report = finite_diff_check(loss, params);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("pooler examples") {
  Rng rng(6);
  Linear identity{Tensor::zeros({4, 4}), Tensor::zeros({4})};
  for (std::size_t i = 0; i < 4; ++i) identity.weight.mutable_values()[i * 4 + i] = 1.0;
  const Tensor h = random_tensor(rng, {3, 5, 4}, false);
  const Tensor pooled = pool_first_token(h, identity);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 4; ++c) CHECK(pooled.values()[b * 4 + c] == std::tanh(h.values()[b * 20 + c]));

  const Linear dense = make_linear(4, 4, 0.5, rng);
  const Tensor out = pool_first_token(h, dense);
  std::vector<double> permuted;
  for (std::size_t b : {2u, 0u, 1u}) permuted.insert(permuted.end(), h.values().begin() + b * 20, h.values().begin() + (b + 1) * 20);
  const Tensor out_perm = pool_first_token(Tensor::from({3, 5, 4}, permuted), dense);
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(out_perm.values()[i * 4 + c] == out.values()[order[i] * 4 + c]);

  const Tensor hx = random_tensor(rng, {2, 3, 4});
  const Tensor probe = random_tensor(rng, {2, 4}, false);
  GradCheckOptions opt;
  opt.tolerance = 1e-5;
  const auto report = finite_diff_check([&] { return ops::sum(ops::mul(pool_first_token(hx, dense), probe)); },
                                        {{"h", hx}, {"w", dense.weight}, {"b", dense.bias}}, opt);
  CHECK(report.passed);
}

TEST_CASE("padding token ids never change unpadded outputs") {
  const EncoderConfig cfg = small_config();
  Rng rng(7);
  Encoder enc(cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    TokenBatch b = random_batch(rng, 3, 6, cfg.vocab_size, 2);
    ForwardMode mode;
    const Tensor h1 = enc.forward(b, mode).hidden;
    for (std::size_t i = 0; i < b.ids.size(); ++i)
      if (!b.mask[i]) {
        b.ids[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
        b.segment_ids[i] = static_cast<int>(rng.below(2));
      }
    const Tensor h2 = enc.forward(b, mode).hidden;
    for (std::size_t i = 0; i < b.ids.size(); ++i)
      if (b.mask[i])
        for (std::size_t c = 0; c < 8; ++c) CHECK(h1.values()[i * 8 + c] == h2.values()[i * 8 + c]);
  }
}

TEST_CASE("full encoder gradients match finite differences") {
  const EncoderConfig cfg = small_config();
  Rng rng(8);
  Encoder enc(cfg, rng);
  const TokenBatch b = random_batch(rng, 2, 5, cfg.vocab_size);
  const Tensor probe = random_tensor(rng, {2, 8}, false);
  auto loss = [&] {
    Rng dropout(3);
    ForwardMode mode{true, &dropout, false};
    return ops::sum(ops::mul(enc.pool(enc.forward(b, mode).hidden), probe));
  };
  const auto report = finite_diff_check(loss, enc.named_parameters());
  INFO("max rel err " << report.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("tracing records every layer") {
  const EncoderConfig cfg = small_config();
  Rng rng(9);
  Encoder enc(cfg, rng);
  const TokenBatch b = random_batch(rng, 2, 5, cfg.vocab_size);
  ForwardMode plain;
  CHECK(enc.forward(b, plain).layers.empty());
  ForwardMode traced{false, nullptr, true};
  const auto out = enc.forward(b, traced);
  REQUIRE(out.layers.size() == 2);
  CHECK(same_bits(out.layers.back().hidden, out.hidden));
  CHECK(out.layers[0].attn_weights.shape() == Shape{2, 2, 5, 5});
  CHECK(out.layers[0].attn_values.shape() == Shape{2, 2, 5, 4});
}

TEST_CASE("checkpoint load restores outputs and reports gaps") {
  inject::testing::TempDir dir("encoder");
  const EncoderConfig cfg = small_config();
  Rng rng(10);
  Encoder source(cfg, rng);
  const TokenBatch b = random_batch(rng, 2, 6, cfg.vocab_size);
  ForwardMode mode;
  const Tensor recorded = source.pool(source.forward(b, mode).hidden);
  save_named_tensors(dir / "enc.ntar", source.named_parameters("bert."));

  Rng other(99);
  Encoder target(cfg, other);
  const auto report = load_named_tensors(dir / "enc.ntar", "bert.", target.named_parameters());
  CHECK(report.missing.empty());
  CHECK(report.unused.empty());
  const Tensor restored = target.pool(target.forward(b, mode).hidden);
  CHECK(same_bits(restored, recorded));
  for (std::size_t i = 0; i < recorded.numel(); ++i) CHECK(std::abs(restored.values()[i] - recorded.values()[i]) < 1e-6);

  // Drop one entry: exactly that name is reported.
  NamedTensorMap archive = read_archive(dir / "enc.ntar");
  archive.erase("bert.encoder.layer.1.output.dense.bias");
  write_archive(dir / "partial.ntar", archive);
  Encoder third(cfg, other);
  const auto partial = load_named_tensors(dir / "partial.ntar", "bert.", third.named_parameters());
  CHECK(partial.missing == std::vector<std::string>{"encoder.layer.1.output.dense.bias"});

  EncoderConfig wider = cfg;
  wider.hidden_size = 10;
  Encoder mismatched(wider, other);
  try {
    load_named_tensors(dir / "enc.ntar", "bert.", mismatched.named_parameters());
    FAIL("expected a shape error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("embeddings.word_embeddings.weight") != std::string::npos);
    CHECK(msg.find("[11, 10]") != std::string::npos);
    CHECK(msg.find("[11, 8]") != std::string::npos);
  }
}
