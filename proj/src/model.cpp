#include "sqgen/model.hpp"

#include <algorithm>
#include <cmath>

#include "sqgen/error.hpp"

namespace sqgen {

using nn::Tensor;
using nn::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::ConfigError, why); };
  if (vocab_size < 5) fail("vocab_size must exceed the special tokens");
  if (d_model < 2) fail("d_model must be at least 2");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (cross_layers == 0) fail("at least one cross layer is required");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_context == 0 || max_question == 0) fail("max lengths must be positive");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.vocab_size = 30522;
  return c;
}

ModelConfig ModelConfig::toy(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 64;
  c.n_heads = 4;
  c.encoder_layers = 2;
  c.decoder_lm_layers = 2;
  c.cross_layers = 2;
  c.ffn_dim = 128;
  c.max_context = 64;
  c.max_question = 16;
  return c;
}

// ---------------------------------------------------------------- parameters

Var& ParameterSet::add(std::string name, Tensor init) {
  for (const auto& it : items_) {
    if (it.name == name) throw Error(ErrorKind::ConfigError, "duplicate parameter " + name);
  }
  items_.push_back({std::move(name), Var(std::move(init), true)});
  return items_.back().var;
}

const Var& ParameterSet::get(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return it.var;
  }
  throw Error(ErrorKind::ConfigError, "no parameter named " + name);
}

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.var.value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& it : items_) it.var.zero_grad();
}

Tensor ParameterInit::normal(std::vector<std::size_t> shape, double stddev) {
  Tensor t(std::move(shape));
  // Box-Muller keeps the stream identical across standard libraries.
  constexpr double kTwoPi = 6.283185307179586476925;
  auto uniform = [this] { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < t.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = kTwoPi * uniform();
    t[i] = stddev * r * std::cos(theta);
    if (i + 1 < t.size()) t[i + 1] = stddev * r * std::sin(theta);
  }
  return t;
}

nn::Linear make_linear(ParameterSet& ps, ParameterInit& init, const std::string& prefix,
                       std::size_t in, std::size_t out) {
  nn::Linear l;
  l.weight = ps.add(prefix + ".weight", init.normal({in, out}));
  l.bias = ps.add(prefix + ".bias", Tensor({1, out}, 0.0));
  return l;
}

nn::AttentionParams make_attention(ParameterSet& ps, ParameterInit& init,
                                   const std::string& prefix, std::size_t d) {
  nn::AttentionParams a;
  a.query = make_linear(ps, init, prefix + ".query", d, d);
  a.key = make_linear(ps, init, prefix + ".key", d, d);
  a.value = make_linear(ps, init, prefix + ".value", d, d);
  a.output = make_linear(ps, init, prefix + ".output", d, d);
  return a;
}

nn::LayerNormParams make_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t d) {
  nn::LayerNormParams ln;
  ln.gain = ps.add(prefix + ".gain", Tensor({1, d}, 1.0));
  ln.bias = ps.add(prefix + ".bias", Tensor({1, d}, 0.0));
  return ln;
}

BlockParams make_block(ParameterSet& ps, ParameterInit& init, const std::string& prefix,
                       std::size_t d, std::size_t ffn) {
  BlockParams b;
  b.attention = make_attention(ps, init, prefix + ".attn", d);
  b.attention_norm = make_layer_norm(ps, prefix + ".attn_norm", d);
  b.ffn_in = make_linear(ps, init, prefix + ".ffn_in", d, ffn);
  b.ffn_out = make_linear(ps, init, prefix + ".ffn_out", ffn, d);
  b.ffn_norm = make_layer_norm(ps, prefix + ".ffn_norm", d);
  return b;
}

Var transformer_block(const Var& x, const BlockParams& p, std::size_t n_heads,
                      const Tensor& mask) {
  const auto attn = nn::multi_head_attention(x, x, x, p.attention, n_heads, mask);
  const Var h = p.attention_norm(nn::add(attn.output, x));
  const Var f = p.ffn_out(nn::gelu(p.ffn_in(h)));
  return p.ffn_norm(nn::add(f, h));
}

// ---------------------------------------------------------------- model

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  ParameterInit init(seed);
  const std::size_t d = config_.d_model;
  const std::size_t V = config_.vocab_size;

  enc_word_ = params_.add("encoder.word_embedding", init.normal({V, d}));
  enc_position_ = params_.add("encoder.position_embedding", init.normal({config_.max_context, d}));
  enc_type_ = params_.add("encoder.type_embedding", init.normal({2, d}));
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    encoder_blocks_.push_back(
        make_block(params_, init, "encoder.layer" + std::to_string(i), d, config_.ffn_dim));
  }

  dec_word_ = params_.add("decoder.word_embedding", init.normal({V, d}));
  dec_position_ =
      params_.add("decoder.position_embedding", init.normal({config_.max_question + 1, d}));
  for (std::size_t i = 0; i < config_.decoder_lm_layers; ++i) {
    lm_blocks_.push_back(
        make_block(params_, init, "decoder.lm_layer" + std::to_string(i), d, config_.ffn_dim));
  }
  for (std::size_t i = 0; i < config_.cross_layers; ++i) {
    const std::string prefix = "decoder.cross_layer" + std::to_string(i);
    CrossBlockParams c;
    c.self_attention = make_attention(params_, init, prefix + ".self_attn", d);
    c.self_norm = make_layer_norm(params_, prefix + ".self_norm", d);
    c.cross_attention = make_attention(params_, init, prefix + ".cross_attn", d);
    c.cross_norm = make_layer_norm(params_, prefix + ".cross_norm", d);
    c.ffn_in = make_linear(params_, init, prefix + ".ffn_in", d, config_.ffn_dim);
    c.ffn_out = make_linear(params_, init, prefix + ".ffn_out", config_.ffn_dim, d);
    c.ffn_norm = make_layer_norm(params_, prefix + ".ffn_norm", d);
    cross_blocks_.push_back(std::move(c));
  }
  gate_ = make_linear(params_, init, "decoder.gate", 2 * d, 1);
  vocab_projection_ = make_linear(params_, init, "decoder.vocab_projection", d, V);
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.items().size());
  for (const auto& p : params_.items()) out.push_back(p.var.value());
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  auto& items = params_.items();
  if (values.size() != items.size()) throw Error(ErrorKind::ConfigError, "snapshot size mismatch");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!values[i].same_shape(items[i].var.value())) {
      throw Error(ErrorKind::ConfigError, "snapshot shape mismatch for " + items[i].name);
    }
    items[i].var.mutable_value() = values[i];
  }
}

Var Model::embed_inputs(std::span<const int> context_ids, std::span<const int> type_ids) const {
  if (context_ids.size() != type_ids.size()) {
    throw Error(ErrorKind::InvalidInput, "context and type ids differ in length");
  }
  if (context_ids.empty()) throw Error(ErrorKind::InvalidInput, "empty context");
  if (context_ids.size() > config_.max_context) {
    throw Error(ErrorKind::ContextTooLong, std::to_string(context_ids.size()) + " > " +
                                               std::to_string(config_.max_context));
  }
  for (int t : type_ids) {
    if (t != 0 && t != 1) throw Error(ErrorKind::InvalidInput, "type ids must be 0 or 1");
  }
  std::vector<int> positions(context_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Var x = nn::add(nn::embedding(enc_word_, context_ids), nn::embedding(enc_position_, positions));
  if (config_.use_type_ids) x = nn::add(x, nn::embedding(enc_type_, type_ids));
  return x;
}

EncoderOutput Model::encode(const Var& embedded) const {
  Var h = embedded;
  for (const auto& block : encoder_blocks_) h = transformer_block(h, block, config_.n_heads);
  return {h};
}

EncoderOutput Model::encode_context(std::span<const int> context_ids,
                                    std::span<const int> type_ids) const {
  return encode(embed_inputs(context_ids, type_ids));
}

Var Model::generation_gate(const Var& y, const Var& a_c) const {
  return nn::sigmoid(gate_(nn::concat_cols({y, a_c})));
}

DecoderOutputs Model::decode(std::span<const int> prefix_ids, const EncoderOutput& encoded,
                             std::span<const int> context_ids) const {
  if (prefix_ids.empty()) throw Error(ErrorKind::InvalidInput, "decoder prefix is empty");
  if (prefix_ids.size() > config_.max_question + 1) {
    throw Error(ErrorKind::QuestionTooLong, std::to_string(prefix_ids.size()) + " > " +
                                                std::to_string(config_.max_question + 1));
  }
  if (context_ids.size() != encoded.hidden.rows()) {
    throw Error(ErrorKind::InvalidInput, "context ids do not match the encoder output");
  }
  const std::size_t T = prefix_ids.size();
  std::vector<int> positions(T);
  for (std::size_t i = 0; i < T; ++i) positions[i] = static_cast<int>(i);
  const Tensor causal = nn::causal_mask(T);

  DecoderOutputs out;
  Var y = nn::add(nn::embedding(dec_word_, prefix_ids), nn::embedding(dec_position_, positions));
  if (config_.use_decoder_lm) {
    for (const auto& block : lm_blocks_) y = transformer_block(y, block, config_.n_heads, causal);
  }
  out.lm_output = y;

  Var x = y;
  Var copy;
  for (const auto& c : cross_blocks_) {
    const auto self = nn::multi_head_attention(x, x, x, c.self_attention, config_.n_heads, causal);
    out.self_attended = c.self_norm(nn::add(self.output, x));
    const auto cross = nn::multi_head_attention(out.self_attended, encoded.hidden, encoded.hidden,
                                                c.cross_attention, config_.n_heads);
    out.cross_attended = c.cross_norm(nn::add(cross.output, out.self_attended));
    const Var f = c.ffn_out(nn::gelu(c.ffn_in(out.cross_attended)));
    out.output = c.ffn_norm(nn::add(f, out.cross_attended));
    copy = cross.mean_weights;
    x = out.output;
  }
  out.copy_attn = copy;
  out.vocab_dist = nn::softmax_rows(vocab_projection_(out.output));

  if (config_.use_pointer) {
    out.p_gen = generation_gate(out.lm_output, out.cross_attended);
    const Var generated = nn::mul_col(out.vocab_dist, out.p_gen);
    const Var copied = nn::mul_col(nn::scatter_cols(copy, context_ids, config_.vocab_size),
                                   nn::add_scalar(nn::scale(out.p_gen, -1.0), 1.0));
    out.final_dist = nn::add(generated, copied);
  } else {
    out.p_gen = nn::constant(Tensor({T, 1}, 1.0));
    out.final_dist = out.vocab_dist;
  }
  return out;
}

namespace {

std::vector<double> last_row(const Var& v) {
  const auto row = v.value().row_values(v.rows() - 1);
  return {row.begin(), row.end()};
}

}  // namespace

DecoderStepOutput Model::decode_step(std::span<const int> prefix_ids, const EncoderOutput& encoded,
                                     std::span<const int> context_ids) const {
  const DecoderOutputs all = decode(prefix_ids, encoded, context_ids);
  DecoderStepOutput step;
  step.a_s = last_row(all.self_attended);
  step.a_c = last_row(all.cross_attended);
  step.o = last_row(all.output);
  step.p_gen = last_row(all.p_gen).front();
  step.vocab_dist = last_row(all.vocab_dist);
  step.copy_attn = last_row(all.copy_attn);
  step.final_dist = last_row(all.final_dist);
  return step;
}

std::vector<double> output_distribution(const DecoderStepOutput& step,
                                        std::span<const int> context_ids) {
  if (step.copy_attn.size() != context_ids.size()) {
    throw Error(ErrorKind::InvalidInput, "copy attention does not match context length");
  }
  std::vector<double> dist(step.vocab_dist.size());
  for (std::size_t w = 0; w < dist.size(); ++w) dist[w] = step.p_gen * step.vocab_dist[w];
  const double copy_weight = 1.0 - step.p_gen;
  for (std::size_t i = 0; i < context_ids.size(); ++i) {
    const int w = context_ids[i];
    if (w < 0 || static_cast<std::size_t>(w) >= dist.size()) {
      throw Error(ErrorKind::InvalidTokenId, "context id outside the vocabulary");
    }
    dist[static_cast<std::size_t>(w)] += copy_weight * step.copy_attn[i];
  }
  return dist;
}

}  // namespace sqgen
