#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sqgen/numerics.hpp"

namespace sqgen {

struct ModelConfig {
  std::size_t vocab_size = 8000;
  std::size_t d_model = 768;
  std::size_t n_heads = 12;
  std::size_t encoder_layers = 12;
  std::size_t decoder_lm_layers = 12;
  std::size_t cross_layers = 2;
  std::size_t ffn_dim = 3072;
  std::size_t max_context = 500;
  std::size_t max_question = 50;
  bool use_pointer = true;
  bool use_decoder_lm = true;
  bool use_type_ids = true;

  // Throws ConfigError when the configuration cannot be built.
  void validate() const;

  static ModelConfig full_scale();
  // 2 layers per stack, 64-dim, 4 heads.
  static ModelConfig toy(std::size_t vocab_size);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedParameter {
  std::string name;
  nn::Var var;
};

// Ordered collection of trainable leaves. Order is registration order and is
// what checkpoints and the optimizer iterate.
class ParameterSet {
 public:
  nn::Var& add(std::string name, nn::Tensor init);
  std::vector<NamedParameter>& items() noexcept { return items_; }
  const std::vector<NamedParameter>& items() const noexcept { return items_; }
  const nn::Var& get(const std::string& name) const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> items_;
};

// Fills weights from N(0, 0.02); biases 0; layer-norm gains 1.
class ParameterInit {
 public:
  explicit ParameterInit(std::uint64_t seed) : rng_(seed) {}
  nn::Tensor normal(std::vector<std::size_t> shape, double stddev = 0.02);

 private:
  std::mt19937_64 rng_;
};

struct BlockParams {
  nn::AttentionParams attention;
  nn::LayerNormParams attention_norm;
  nn::Linear ffn_in;
  nn::Linear ffn_out;
  nn::LayerNormParams ffn_norm;
};

struct CrossBlockParams {
  nn::AttentionParams self_attention;
  nn::LayerNormParams self_norm;
  nn::AttentionParams cross_attention;
  nn::LayerNormParams cross_norm;
  nn::Linear ffn_in;
  nn::Linear ffn_out;
  nn::LayerNormParams ffn_norm;
};

nn::AttentionParams make_attention(ParameterSet& ps, ParameterInit& init, const std::string& prefix,
                                   std::size_t d);
nn::LayerNormParams make_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t d);
nn::Linear make_linear(ParameterSet& ps, ParameterInit& init, const std::string& prefix,
                       std::size_t in, std::size_t out);
BlockParams make_block(ParameterSet& ps, ParameterInit& init, const std::string& prefix,
                       std::size_t d, std::size_t ffn);

// Post-norm transformer block: LN(MHA(x)+x) then LN(FFN(x)+x).
nn::Var transformer_block(const nn::Var& x, const BlockParams& p, std::size_t n_heads,
                          const nn::Tensor& mask = {});

struct EncoderOutput {
  nn::Var hidden;  // [L, d_model]
};

// All decoder steps for a prefix, as graph values. Row t belongs to step t.
struct DecoderOutputs {
  nn::Var lm_output;     // Y: LM-stack output (raw embeddings when the LM is disabled)
  nn::Var self_attended;  // A_S of the final cross block
  nn::Var cross_attended; // A_C of the final cross block
  nn::Var output;        // O of the final cross block
  nn::Var p_gen;         // [T, 1]
  nn::Var vocab_dist;    // [T, V]
  nn::Var copy_attn;     // [T, L]
  nn::Var final_dist;    // [T, V]
};

// Values at the last step of a prefix.
struct DecoderStepOutput {
  std::vector<double> a_s;
  std::vector<double> a_c;
  std::vector<double> o;
  double p_gen = 1.0;
  std::vector<double> vocab_dist;
  std::vector<double> copy_attn;
  std::vector<double> final_dist;
};

// final(w) = p_gen * vocab(w) + (1 - p_gen) * sum_{i: context[i] = w} copy[i].
std::vector<double> output_distribution(const DecoderStepOutput& step,
                                        std::span<const int> context_ids);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  // Copies would alias parameter storage.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Parameter values only, in registration order.
  std::vector<nn::Tensor> snapshot() const;
  void restore(const std::vector<nn::Tensor>& values);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  // X + P + T for the context; no sentinel tokens are added.
  nn::Var embed_inputs(std::span<const int> context_ids, std::span<const int> type_ids) const;
  EncoderOutput encode(const nn::Var& embedded) const;
  EncoderOutput encode_context(std::span<const int> context_ids,
                               std::span<const int> type_ids) const;

  // Runs every step of a BOS-prefixed prefix.
  DecoderOutputs decode(std::span<const int> prefix_ids, const EncoderOutput& encoded,
                        std::span<const int> context_ids) const;
  DecoderStepOutput decode_step(std::span<const int> prefix_ids, const EncoderOutput& encoded,
                                std::span<const int> context_ids) const;

  // P_G = logistic(w . [y, a_c] + b), row-wise.
  nn::Var generation_gate(const nn::Var& y, const nn::Var& a_c) const;

  // Checkpoint as <prefix>.json manifest + <prefix>.bin little-endian float64 blob.
  void save(const std::string& prefix) const;
  static Model load(const std::string& prefix);

 private:
  ModelConfig config_;
  ParameterSet params_;

  nn::Var enc_word_;
  nn::Var enc_position_;
  nn::Var enc_type_;
  std::vector<BlockParams> encoder_blocks_;

  nn::Var dec_word_;
  nn::Var dec_position_;
  std::vector<BlockParams> lm_blocks_;
  std::vector<CrossBlockParams> cross_blocks_;

  nn::Linear gate_;
  nn::Linear vocab_projection_;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// Writes/reads a named-array container; shared by every checkpointed module.
void save_parameters(const ParameterSet& params, const std::string& config_json,
                     const std::string& kind, const std::string& prefix);
// Returns the stored config JSON; array names and shapes must match `params`.
std::string load_parameters(ParameterSet& params, const std::string& kind,
                            const std::string& prefix);
std::string read_checkpoint_config(const std::string& prefix, const std::string& kind);

}  // namespace sqgen
