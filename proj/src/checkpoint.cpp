#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sqgen/error.hpp"
#include "sqgen/model.hpp"

namespace sqgen {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "sqgen-checkpoint";
constexpr int kVersion = 1;

std::string manifest_path(const std::string& prefix) { return prefix + ".json"; }
std::string blob_path(const std::string& prefix) { return prefix + ".bin"; }

void write_le_doubles(std::ostream& os, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

double read_le_double(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

json read_manifest(const std::string& prefix) {
  std::ifstream is(manifest_path(prefix));
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + manifest_path(prefix));
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, manifest_path(prefix) + ": " + e.what());
  }
  if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
    throw Error(ErrorKind::FormatError, manifest_path(prefix) + " is not a checkpoint manifest");
  }
  return j;
}

}  // namespace

std::string config_to_json(const ModelConfig& c) {
  json j = {
      {"vocab_size", c.vocab_size},         {"d_model", c.d_model},
      {"n_heads", c.n_heads},               {"encoder_layers", c.encoder_layers},
      {"decoder_lm_layers", c.decoder_lm_layers}, {"cross_layers", c.cross_layers},
      {"ffn_dim", c.ffn_dim},               {"max_context", c.max_context},
      {"max_question", c.max_question},     {"use_pointer", c.use_pointer},
      {"use_decoder_lm", c.use_decoder_lm}, {"use_type_ids", c.use_type_ids},
  };
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("model config: ") + e.what());
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("vocab_size", c.vocab_size);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("encoder_layers", c.encoder_layers);
    get("decoder_lm_layers", c.decoder_lm_layers);
    get("cross_layers", c.cross_layers);
    get("ffn_dim", c.ffn_dim);
    get("max_context", c.max_context);
    get("max_question", c.max_question);
    get("use_pointer", c.use_pointer);
    get("use_decoder_lm", c.use_decoder_lm);
    get("use_type_ids", c.use_type_ids);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("model config: ") + e.what());
  }
  return c;
}

void save_parameters(const ParameterSet& params, const std::string& config_json,
                     const std::string& kind, const std::string& prefix) {
  json arrays = json::array();
  std::size_t offset = 0;
  for (const auto& p : params.items()) {
    arrays.push_back({{"name", p.name}, {"shape", p.var.value().shape()}, {"offset", offset}});
    offset += p.var.value().size();
  }
  const json manifest = {
      {"format", kFormat},
      {"version", kVersion},
      {"kind", kind},
      {"byte_order", "little"},
      {"dtype", "float64"},
      {"blob", std::filesystem::path(blob_path(prefix)).filename().string()},
      {"count", offset},
      {"config", json::parse(config_json)},
      {"arrays", arrays},
  };
  {
    std::ofstream os(blob_path(prefix), std::ios::binary);
    if (!os) throw Error(ErrorKind::IoError, "cannot write " + blob_path(prefix));
    for (const auto& p : params.items()) write_le_doubles(os, p.var.value().values());
  }
  std::ofstream os(manifest_path(prefix));
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + manifest_path(prefix));
  os << manifest.dump(2) << '\n';
}

std::string read_checkpoint_config(const std::string& prefix, const std::string& kind) {
  const json j = read_manifest(prefix);
  if (j.value("kind", "") != kind) {
    throw Error(ErrorKind::FormatError,
                manifest_path(prefix) + " holds a '" + j.value("kind", "") + "' checkpoint, not '" +
                    kind + "'");
  }
  return j.at("config").dump();
}

std::string load_parameters(ParameterSet& params, const std::string& kind,
                            const std::string& prefix) {
  const json j = read_manifest(prefix);
  if (j.value("kind", "") != kind) {
    throw Error(ErrorKind::FormatError, manifest_path(prefix) + " kind mismatch");
  }
  if (j.value("byte_order", "") != "little" || j.value("dtype", "") != "float64") {
    throw Error(ErrorKind::FormatError, "unsupported checkpoint encoding");
  }
  const auto blob_file =
      std::filesystem::path(prefix).parent_path() / j.at("blob").get<std::string>();
  std::ifstream is(blob_file, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + blob_file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const auto count = j.at("count").get<std::size_t>();
  if (bytes.size() != count * 8) {
    throw Error(ErrorKind::FormatError, "checkpoint blob has " + std::to_string(bytes.size()) +
                                            " bytes, expected " + std::to_string(count * 8));
  }
  const auto& arrays = j.at("arrays");
  if (arrays.size() != params.items().size()) {
    throw Error(ErrorKind::FormatError, "checkpoint array count does not match the model");
  }
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    auto& p = params.items()[k];
    const auto& a = arrays[k];
    const auto shape = a.at("shape").get<std::vector<std::size_t>>();
    if (a.at("name").get<std::string>() != p.name || shape != p.var.value().shape()) {
      throw Error(ErrorKind::FormatError, "checkpoint array " + a.at("name").get<std::string>() +
                                              " does not match parameter " + p.name);
    }
    const auto offset = a.at("offset").get<std::size_t>();
    auto& dst = p.var.mutable_value();
    if ((offset + dst.size()) * 8 > bytes.size()) {
      throw Error(ErrorKind::FormatError, "checkpoint array overruns blob");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = read_le_double(&bytes[(offset + i) * 8]);
  }
  return j.at("config").dump();
}

void Model::save(const std::string& prefix) const {
  save_parameters(params_, config_to_json(config_), "bert_pgn", prefix);
}

Model Model::load(const std::string& prefix) {
  Model m(config_from_json(read_checkpoint_config(prefix, "bert_pgn")), 0);
  load_parameters(m.params_, "bert_pgn", prefix);
  return m;
}

}  // namespace sqgen
