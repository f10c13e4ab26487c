#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "sqgen/error.hpp"
#include "sqgen/model.hpp"
#include "support.hpp"

using namespace sqgen;
using namespace sqgen::testing;
using nn::Tensor;

namespace {

std::vector<double> row_of(const nn::Var& v, std::size_t r) {
  const auto x = v.value().row_values(r);
  return {x.begin(), x.end()};
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string temp_prefix(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sqgen_test_model";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void set_gate_bias(Model& m, double b) {
  auto& items = m.parameters().items();
  for (auto& p : items) {
    if (p.name == "decoder.gate.bias") p.var.mutable_value().fill(b);
  }
}

}  // namespace

TEST_CASE("configuration validation") {
  ModelConfig c = ModelConfig::toy(30);
  c.validate();
  CHECK(c.d_model == 64);
  CHECK(c.n_heads == 4);
  CHECK(ModelConfig::full_scale().vocab_size == 30522);
  CHECK(ModelConfig::full_scale().d_model == 768);
  c.n_heads = 5;
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig::toy(3);
  CHECK(error_kind([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig::toy(30);
  c.cross_layers = 0;
  CHECK(error_kind([&] { Model(c, 0); }) == ErrorKind::ConfigError);
}

TEST_CASE("initialization statistics and determinism") {
  const Model a(ModelConfig::toy(40), 7);
  const Model b(ModelConfig::toy(40), 7);
  const Model c(ModelConfig::toy(40), 8);
  CHECK(a.snapshot().size() == b.snapshot().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.snapshot().size(); ++i) {
    CHECK(a.snapshot()[i].storage() == b.snapshot()[i].storage());
    differs = differs || a.snapshot()[i].storage() != c.snapshot()[i].storage();
  }
  CHECK(differs);
  const Tensor& w = a.parameters().get("encoder.word_embedding").value();
  double mean = 0, sq = 0;
  for (double v : w.values()) {
    mean += v;
    sq += v * v;
  }
  mean /= static_cast<double>(w.size());
  const double sd = std::sqrt(sq / static_cast<double>(w.size()) - mean * mean);
  CHECK(std::abs(mean) < 0.002);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.05));
  for (double v : a.parameters().get("encoder.layer0.attn_norm.gain").value().values()) CHECK(v == 1.0);
  for (double v : a.parameters().get("decoder.gate.bias").value().values()) CHECK(v == 0.0);
}

TEST_CASE("input validation") {
  const ModelConfig c = micro_config(20);
  const Model m(c, 1);
  std::vector<int> ctx(c.max_context + 1, 5), types(c.max_context + 1, 0);
  CHECK(error_kind([&] { m.encode_context(ctx, types); }) == ErrorKind::ContextTooLong);
  ctx.resize(4);
  types.assign(4, 2);
  CHECK(error_kind([&] { m.encode_context(ctx, types); }) == ErrorKind::InvalidInput);
  types.assign(3, 0);
  CHECK(error_kind([&] { m.encode_context(ctx, types); }) == ErrorKind::InvalidInput);
  types.assign(4, 1);
  const auto enc = m.encode_context(ctx, types);
  std::vector<int> prefix(c.max_question + 2, kBos);
  CHECK(error_kind([&] { m.decode(prefix, enc, ctx); }) == ErrorKind::QuestionTooLong);
  prefix.resize(c.max_question + 1);
  CHECK(m.decode(prefix, enc, ctx).final_dist.rows() == c.max_question + 1);
  CHECK(error_kind([&] { m.decode(std::vector<int>{}, enc, ctx); }) == ErrorKind::InvalidInput);
  ctx[0] = 20;
  CHECK(error_kind([&] { m.encode_context(ctx, types); }) == ErrorKind::InvalidTokenId);
}

TEST_CASE("output shapes and mixture") {
  std::mt19937_64 rng(3);
  const ModelConfig c = micro_config(25);
  Model m(c, 2);
  scale_parameters(m, 20.0);
  const auto ctx = random_ids(rng, 6, c.vocab_size);
  const auto types = random_types(rng, 6);
  const auto enc = m.encode_context(ctx, types);
  const std::vector<int> prefix{kBos, ctx[1], ctx[2]};
  const DecoderOutputs out = m.decode(prefix, enc, ctx);
  CHECK(out.final_dist.rows() == 3);
  CHECK(out.final_dist.cols() == c.vocab_size);
  CHECK(out.copy_attn.cols() == ctx.size());
  CHECK(out.p_gen.cols() == 1);
  for (std::size_t t = 0; t < 3; ++t) {
    double total = 0;
    for (double v : row_of(out.final_dist, t)) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    const double p = out.p_gen.value()(t, 0);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }

  // The mixture equals p * vocab + (1 - p) * scattered copy attention.
  const DecoderStepOutput step = m.decode_step(prefix, enc, ctx);
  CHECK(max_abs_diff(output_distribution(step, ctx), step.final_dist) < 1e-12);

  // The gate is a logistic unit over [Y, A_C].
  const Tensor& w = m.parameters().get("decoder.gate.weight").value();
  const double b = m.parameters().get("decoder.gate.bias").value()[0];
  const auto y = row_of(out.lm_output, 2);
  const auto ac = row_of(out.cross_attended, 2);
  double z = b;
  for (std::size_t i = 0; i < c.d_model; ++i) z += w(i, 0) * y[i] + w(c.d_model + i, 0) * ac[i];
  CHECK(step.p_gen == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
}

TEST_CASE("saturated gates isolate the two distributions") {
  std::mt19937_64 rng(4);
  const ModelConfig c = micro_config(30);
  Model m(c, 3);
  scale_parameters(m, 10.0);
  const auto ctx = random_ids(rng, 5, c.vocab_size);
  const auto types = random_types(rng, 5);
  const std::vector<int> prefix{kBos, ctx[0]};
  const auto enc = m.encode_context(ctx, types);

  set_gate_bias(m, 1e4);
  const auto gen = m.decode_step(prefix, enc, ctx);
  CHECK(gen.p_gen == 1.0);
  CHECK(gen.final_dist == gen.vocab_dist);

  set_gate_bias(m, -1e4);
  const auto cp = m.decode_step(prefix, enc, ctx);
  CHECK(cp.p_gen == 0.0);
  const std::set<int> in_context(ctx.begin(), ctx.end());
  for (std::size_t w = 0; w < cp.final_dist.size(); ++w) {
    if (!in_context.count(static_cast<int>(w))) CHECK(cp.final_dist[w] == 0.0);
  }
}

TEST_CASE("disabling the pointer yields the vocabulary distribution") {
  ModelConfig c = micro_config(22);
  c.use_pointer = false;
  const Model m(c, 5);
  const std::vector<int> ctx{5, 6, 7};
  const std::vector<int> types{0, 1, 1};
  const auto out = m.decode(std::vector<int>{kBos, 6}, m.encode_context(ctx, types), ctx);
  CHECK(out.final_dist.value().storage() == out.vocab_dist.value().storage());
  for (double p : out.p_gen.value().values()) CHECK(p == 1.0);
}

TEST_CASE("type ids matter only when enabled") {
  ModelConfig c = micro_config(22);
  const std::vector<int> ctx{5, 6, 7, 8};
  const std::vector<int> t0{0, 0, 0, 0}, t1{0, 1, 1, 0};
  const Model with(c, 6);
  CHECK(max_abs_diff(with.encode_context(ctx, t0).hidden.value().storage(),
                     with.encode_context(ctx, t1).hidden.value().storage()) > 1e-6);
  c.use_type_ids = false;
  const Model without(c, 6);
  CHECK(without.encode_context(ctx, t0).hidden.value().storage() ==
        without.encode_context(ctx, t1).hidden.value().storage());
}

TEST_CASE("disabling the decoder LM feeds raw embeddings to the cross blocks") {
  ModelConfig c = micro_config(22);
  c.use_decoder_lm = false;
  const Model m(c, 8);
  const std::vector<int> ctx{5, 6, 7};
  const std::vector<int> types{1, 1, 1};
  const std::vector<int> prefix{kBos, 9};
  const auto out = m.decode(prefix, m.encode_context(ctx, types), ctx);
  const Tensor& we = m.parameters().get("decoder.word_embedding").value();
  const Tensor& pe = m.parameters().get("decoder.position_embedding").value();
  const auto y = row_of(out.lm_output, 1);
  for (std::size_t i = 0; i < c.d_model; ++i) CHECK(y[i] == doctest::Approx(we(9, i) + pe(1, i)));
}

TEST_CASE("decoder steps are prefix-stable") {
  std::mt19937_64 rng(9);
  const ModelConfig c = micro_config(20);
  Model m(c, 4);
  scale_parameters(m, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ctx = random_ids(rng, 6, c.vocab_size);
    const auto enc = m.encode_context(ctx, random_types(rng, 6));
    std::vector<int> prefix{kBos};
    const auto more = random_ids(rng, c.max_question, c.vocab_size);
    prefix.insert(prefix.end(), more.begin(), more.end());
    const auto full = m.decode(prefix, enc, ctx);
    for (std::size_t t = 1; t <= prefix.size(); ++t) {
      const auto step = m.decode_step(std::span<const int>(prefix).first(t), enc, ctx);
      CHECK(max_abs_diff(step.final_dist, row_of(full.final_dist, t - 1)) < 1e-9);
      CHECK(max_abs_diff(step.copy_attn, row_of(full.copy_attn, t - 1)) < 1e-9);
    }
  }
}

TEST_CASE("checkpoints round-trip byte for byte") {
  ModelConfig c = micro_config(21);
  c.use_type_ids = false;
  const Model m(c, 11);
  const std::string a = temp_prefix("a"), b = temp_prefix("b");
  m.save(a);
  const Model loaded = Model::load(a);
  CHECK(loaded.config() == c);
  for (std::size_t i = 0; i < m.snapshot().size(); ++i) {
    CHECK(loaded.snapshot()[i].storage() == m.snapshot()[i].storage());
  }
  loaded.save(b);
  CHECK(read_bytes(a + ".bin") == read_bytes(b + ".bin"));
  CHECK(read_bytes(a + ".bin").size() == 8 * m.parameters().total_size());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Model m(micro_config(21), 12);
  const std::string p = temp_prefix("corrupt");
  m.save(p);
  std::filesystem::resize_file(p + ".bin", 16);
  CHECK(error_kind([&] { Model::load(p); }) == ErrorKind::FormatError);
  CHECK(error_kind([&] { Model::load(temp_prefix("missing")); }) == ErrorKind::IoError);
  m.save(p);
  {
    std::ifstream is(p + ".json");
    std::stringstream ss;
    ss << is.rdbuf();
    std::string text = ss.str();
    text.replace(text.find("bert_pgn"), 8, "joint_qa");
    std::ofstream(p + ".json") << text;
  }
  CHECK(error_kind([&] { Model::load(p); }) == ErrorKind::FormatError);
}

TEST_CASE("snapshots restore parameter values") {
  Model m(micro_config(21), 13);
  const auto snap = m.snapshot();
  for (auto& p : m.parameters().items()) p.var.mutable_value().fill(0.5);
  m.restore(snap);
  CHECK(m.snapshot()[0].storage() == snap[0].storage());
  auto bad = snap;
  bad.pop_back();
  CHECK(error_kind([&] { m.restore(bad); }) == ErrorKind::ConfigError);
}
