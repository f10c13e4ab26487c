#include "sqgen/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "sqgen/decoding.hpp"
#include "sqgen/error.hpp"
#include "sqgen/genmetrics.hpp"
#include "sqgen/model.hpp"
#include "sqgen/parallel.hpp"
#include "sqgen/qaeval.hpp"
#include "sqgen/textproc.hpp"
#include "sqgen/training.hpp"

#ifndef SQGEN_SOURCE_DIR
#define SQGEN_SOURCE_DIR "."
#endif

namespace sqgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  os << text;
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, where + ": " + e.what());
  }
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::string fixed17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// One manifest per artifact-producing command.
struct RunManifest {
  explicit RunManifest(std::string cmd) : command(std::move(cmd)) {}

  std::string command;
  ojson config = ojson::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& path) const {
    ojson j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["git_describe"] = git_describe();
    j["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(path, j.dump(2) + "\n");
  }
};

// ---------------------------------------------------------------- vocab

struct VocabArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::size_t size = 8000;
  bool no_lowercase = false;
};

// Plain text lines, or JSONL whose text fields all feed the vocabulary.
std::vector<std::string> vocab_corpus(const std::vector<std::string>& paths) {
  std::vector<std::string> corpus;
  for (const auto& path : paths) {
    for (const auto& line : read_lines(path)) {
      if (blank(line)) continue;
      if (line.front() == '{') {
        const json j = parse_json(line, path);
        for (const char* key : {"title", "context", "question", "article", "highlights"}) {
          if (j.contains(key) && j.at(key).is_string()) {
            std::string text = j.at(key).get<std::string>();
            if (std::string_view(key) == "article") text = strip_news_article(text);
            if (!blank(text)) corpus.push_back(std::move(text));
          }
        }
      } else {
        corpus.push_back(line);
      }
    }
  }
  return corpus;
}

int cmd_vocab(const VocabArgs& a, std::ostream& err) {
  RunManifest m{"vocab"};
  const Vocab v = train_vocab(vocab_corpus(a.inputs), a.size, {!a.no_lowercase});
  v.save_file(a.out);
  m.config = {{"size", a.size}, {"lowercase", !a.no_lowercase}};
  m.inputs = a.inputs;
  m.outputs = {a.out};
  m.write(a.out + ".manifest.json");
  err << "vocabulary: " << v.size() << " tokens, " << v.merges().size() << " merges\n";
  return kExitOk;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string kind = "nq";
  std::string input;
  std::string out;
  std::string vocab;
  std::size_t max_context = kMaxContextTokens;
  std::size_t max_question = kMaxQuestionTokens;
  std::optional<std::size_t> max_news;
  std::string context_source = "article";
};

RawRecord raw_record_from_json(const json& j) {
  RawRecord r;
  try {
    r.id = j.value("id", "");
    r.title = j.value("title", "");
    r.question = j.value("question", "");
    r.context = j.at("context").get<std::string>();
    r.starts_with_paragraph_tag = j.value("p_tag", true);
    if (j.contains("short_spans")) {
      for (const auto& s : j.at("short_spans")) {
        r.short_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("NQ record: ") + e.what());
  }
  return r;
}

struct NewsArticle {
  std::string id;
  std::string article;
  std::string highlights;
};

// News input is JSONL {"id","article","highlights"} or a single plain-text article.
std::vector<NewsArticle> read_news(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<NewsArticle> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return out;
  if (text[first] != '{') {
    // Highlights in a plain-text article follow "@highlight" lines.
    std::string highlights;
    std::istringstream is(text);
    std::string line;
    bool in_highlight = false;
    while (std::getline(is, line)) {
      if (line.rfind("@highlight", 0) == 0) {
        in_highlight = true;
        continue;
      }
      if (in_highlight && !blank(line)) highlights += (highlights.empty() ? "" : " ") + line;
    }
    out.push_back({fs::path(path).stem().string(), text, highlights});
    return out;
  }
  for (const auto& line : read_lines(path)) {
    if (blank(line)) continue;
    const json j = parse_json(line, path);
    NewsArticle a;
    a.id = j.value("id", std::to_string(out.size()));
    a.article = j.value("article", "");
    if (j.contains("highlights")) {
      const auto& h = j.at("highlights");
      if (h.is_array()) {
        for (const auto& s : h) a.highlights += (a.highlights.empty() ? "" : " ") + s.get<std::string>();
      } else {
        a.highlights = h.get<std::string>();
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

int cmd_prepare(const PrepareArgs& a, std::ostream& err) {
  RunManifest m{"prepare"};
  const Vocab vocab = Vocab::load_file(a.vocab);
  std::vector<PreparedExample> kept;
  std::map<std::string, std::size_t> rejected;
  if (a.kind == "nq") {
    const PrepareLimits limits{a.max_context, a.max_question};
    for (const auto& line : read_lines(a.input)) {
      if (blank(line)) continue;
      const auto result = prepare_example(raw_record_from_json(parse_json(line, a.input)), vocab, limits);
      if (const auto* ex = std::get_if<PreparedExample>(&result)) {
        kept.push_back(*ex);
      } else {
        ++rejected[std::get<Rejected>(result).reason];
      }
    }
  } else if (a.kind == "news") {
    if (a.context_source != "article" && a.context_source != "highlights") {
      throw Error(ErrorKind::InvalidInput, "context source must be article or highlights");
    }
    const std::size_t limit = a.max_news.value_or(kMaxNewsTokens);
    for (const auto& art : read_news(a.input)) {
      const std::string& text = a.context_source == "article" ? art.article : art.highlights;
      const auto result = prepare_news(text, vocab, art.id, limit);
      if (const auto* ex = std::get_if<PreparedExample>(&result)) {
        kept.push_back(*ex);
      } else {
        ++rejected[std::get<Rejected>(result).reason];
      }
    }
  } else {
    throw Error(ErrorKind::InvalidInput, "unknown prepare kind " + a.kind);
  }
  write_examples(a.out, kept);

  json hist = json::object();
  for (const auto& [reason, n] : rejected) hist[reason] = n;
  err << "prepared " << kept.size() << " examples; rejected " << hist.dump() << '\n';

  m.config = {{"kind", a.kind},
              {"max_context", a.max_context},
              {"max_question", a.max_question},
              {"max_news", a.max_news.value_or(kMaxNewsTokens)},
              {"context_source", a.context_source},
              {"rejected", ojson::parse(hist.dump())}};
  m.inputs = {a.input, a.vocab};
  m.outputs = {a.out};
  m.write(a.out + ".manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string dev;
  std::string vocab;
  std::string out_dir;
  std::string config;
  std::string preset = "toy";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> max_context;
  std::optional<std::size_t> max_question;
  std::optional<double> split_ratio;
  bool no_pointer = false;
  bool no_decoder_lm = false;
  bool no_type_ids = false;
};

ModelConfig preset_config(const std::string& preset, std::size_t vocab_size) {
  if (preset == "toy") return ModelConfig::toy(vocab_size);
  ModelConfig c = preset == "full" ? ModelConfig::full_scale() : ModelConfig{};
  if (preset != "full" && preset != "default") {
    throw Error(ErrorKind::ConfigError, "unknown preset " + preset);
  }
  c.vocab_size = vocab_size;
  return c;
}

struct ResolvedTrain {
  ModelConfig model;
  TrainConfig train;
  double split_ratio = 0.9;
};

// Config file first, then flags.
ResolvedTrain resolve_train(const TrainArgs& a, std::size_t vocab_size) {
  json file = json::object();
  if (!a.config.empty()) file = parse_json(read_file(a.config), a.config);
  ResolvedTrain r;
  const std::string preset = file.value("preset", a.preset);
  json model = parse_json(config_to_json(preset_config(preset, vocab_size)), "preset");
  if (file.contains("model")) model.merge_patch(file.at("model"));
  model["vocab_size"] = vocab_size;
  if (a.max_context) model["max_context"] = *a.max_context;
  if (a.max_question) model["max_question"] = *a.max_question;
  if (a.no_pointer) model["use_pointer"] = false;
  if (a.no_decoder_lm) model["use_decoder_lm"] = false;
  if (a.no_type_ids) model["use_type_ids"] = false;
  r.model = config_from_json(model.dump());
  r.model.validate();

  if (file.contains("train")) {
    const json& t = file.at("train");
    try {
      r.train.lr = t.value("lr", r.train.lr);
      r.train.batch_size = t.value("batch_size", r.train.batch_size);
      r.train.epochs = t.value("epochs", r.train.epochs);
      r.train.seed = t.value("seed", r.train.seed);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("train config: ") + e.what());
    }
  }
  r.split_ratio = file.value("split_ratio", r.split_ratio);
  if (a.lr) r.train.lr = *a.lr;
  if (a.batch_size) r.train.batch_size = *a.batch_size;
  if (a.epochs) r.train.epochs = *a.epochs;
  if (a.seed) r.train.seed = *a.seed;
  if (a.split_ratio) r.split_ratio = *a.split_ratio;
  r.train.validate();
  return r;
}

std::string epoch_prefix(const std::string& dir, std::size_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(3) << std::setfill('0') << epoch;
  return (fs::path(dir) / os.str()).string();
}

int cmd_train(const TrainArgs& a, std::ostream& err) {
  RunManifest m{"train"};
  const Vocab vocab = Vocab::load_file(a.vocab);
  const ResolvedTrain cfg = resolve_train(a, vocab.size());
  fs::create_directories(a.out_dir);

  DatasetSplit split;
  if (a.dev.empty()) {
    split = split_dataset(read_examples(a.data), cfg.split_ratio, cfg.train.seed);
  } else {
    split.train = read_examples(a.data);
    split.dev = read_examples(a.dev);
    split.seed = cfg.train.seed;
  }
  for (const auto* set : {&split.train, &split.dev}) {
    for (const auto& ex : *set) validate_example(ex, cfg.model.max_context);
  }

  Model model(cfg.model, cfg.train.seed);
  if (cfg.train.epochs == 0) model.save(epoch_prefix(a.out_dir, 0));
  const auto on_epoch = [&](const EpochLog& e, const Model& mdl) {
    mdl.save(epoch_prefix(a.out_dir, e.epoch));
    err << "epoch " << e.epoch << " train_loss " << e.train_loss << " dev_ppl " << e.dev_perplexity
        << '\n';
    return true;
  };
  const TrainResult result = train(model, split, cfg.train, on_epoch);
  const std::string best = (fs::path(a.out_dir) / "best").string();
  model.save(best);
  write_file((fs::path(a.out_dir) / "train_log.csv").string(), training_log_csv(result.log));

  m.config = ojson::parse(config_to_json(cfg.model));
  m.config["train"] = {{"lr", cfg.train.lr},
                       {"batch_size", cfg.train.batch_size},
                       {"epochs", cfg.train.epochs},
                       {"split_ratio", cfg.split_ratio},
                       {"n_train", split.train.size()},
                       {"n_dev", split.dev.size()}};
  m.config["best_epoch"] = result.best_epoch;
  m.seed = cfg.train.seed;
  m.inputs = {a.data, a.vocab};
  if (!a.dev.empty()) m.inputs.push_back(a.dev);
  m.outputs = {best + ".json", best + ".bin", (fs::path(a.out_dir) / "train_log.csv").string()};
  m.write((fs::path(a.out_dir) / "manifest.json").string());
  err << "best epoch " << result.best_epoch << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string checkpoint;
  std::string vocab;
  std::string data;
  std::string out;
  std::string mode = "beam";
  std::size_t beam = 3;
  double top_p = 0.9;
  double temperature = 0.1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_question;
  std::optional<std::size_t> max_context;
};

std::string strip_checkpoint_suffix(std::string prefix) {
  for (const char* ext : {".json", ".bin"}) {
    const std::string e(ext);
    if (prefix.size() > e.size() && prefix.compare(prefix.size() - e.size(), e.size(), e) == 0) {
      prefix.resize(prefix.size() - e.size());
    }
  }
  return prefix;
}

int cmd_generate(const GenerateArgs& a, std::ostream& err) {
  RunManifest m{"generate"};
  const std::string prefix = strip_checkpoint_suffix(a.checkpoint);
  const Vocab vocab = Vocab::load_file(a.vocab);
  const ModelConfig stored = config_from_json(read_checkpoint_config(prefix, "bert_pgn"));
  if (stored.vocab_size != vocab.size()) {
    throw Error(ErrorKind::ConfigError, "checkpoint expects " + std::to_string(stored.vocab_size) +
                                            " tokens but the vocabulary has " +
                                            std::to_string(vocab.size()));
  }
  if (a.max_context && *a.max_context != stored.max_context) {
    throw Error(ErrorKind::ConfigError, "--max-context differs from the checkpoint");
  }
  if (a.mode != "beam" && a.mode != "greedy" && a.mode != "nucleus") {
    throw Error(ErrorKind::InvalidInput, "unknown mode " + a.mode);
  }
  const Model model = Model::load(prefix);
  const std::vector<PreparedExample> data = read_examples(a.data);
  for (const auto& ex : data) validate_example(ex, stored.max_context);

  const std::size_t max_len = std::min(a.max_question.value_or(stored.max_question),
                                       stored.max_question) + 1;
  std::vector<Hypothesis> results(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const PgnStepModel step(model, data[i].context_ids, data[i].type_ids);
    if (a.mode == "beam") {
      BeamOptions o;
      o.max_len = max_len;
      o.beam = a.beam;
      results[i] = beam_search(step, o).front();
    } else if (a.mode == "greedy") {
      DecodeOptions o;
      o.max_len = max_len;
      results[i] = greedy(step, o);
    } else {
      NucleusOptions o;
      o.max_len = max_len;
      o.top_p = a.top_p;
      o.temperature = a.temperature;
      // Per-example streams keep output independent of thread scheduling.
      std::seed_seq seq{static_cast<std::uint32_t>(a.seed), static_cast<std::uint32_t>(a.seed >> 32),
                        static_cast<std::uint32_t>(i)};
      std::array<std::uint64_t, 1> s{};
      seq.generate(reinterpret_cast<std::uint32_t*>(s.data()),
                   reinterpret_cast<std::uint32_t*>(s.data() + 1));
      o.seed = s[0];
      results[i] = nucleus_sample(step, o);
    }
  });

  std::ostringstream os;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ids = strip_specials(results[i]);
    ojson j;
    j["id"] = data[i].id;
    j["question_text"] = decode(ids, vocab);
    j["logprob"] = results[i].logprob;
    os << j.dump() << '\n';
  }
  write_file(a.out, os.str());

  m.config = {{"mode", a.mode},        {"beam", a.beam},       {"top_p", a.top_p},
              {"temperature", a.temperature}, {"max_len", max_len}};
  m.seed = a.seed;
  m.inputs = {prefix + ".json", a.vocab, a.data};
  m.outputs = {a.out};
  m.write(a.out + ".manifest.json");
  err << "generated " << data.size() << " questions\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct Generation {
  std::string id;
  std::string question_text;
};

std::vector<Generation> read_generations(const std::string& path) {
  std::vector<Generation> out;
  for (const auto& line : read_lines(path)) {
    if (blank(line)) continue;
    const json j = parse_json(line, path);
    try {
      out.push_back({j.at("id").get<std::string>(), j.at("question_text").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::FormatError, path + ": " + e.what());
    }
  }
  return out;
}

struct EvalGenArgs {
  std::string candidates;
  std::string references;
  std::string vocab;
  std::string out;
  std::string per_example;
};

// References are prepared examples (decoded with the vocabulary) or JSONL
// {"id","question"}. Several references may share an id.
std::map<std::string, std::vector<std::string>> read_references(const std::string& path,
                                                                const std::string& vocab_path) {
  std::optional<Vocab> vocab;
  std::map<std::string, std::vector<std::string>> refs;
  for (const auto& line : read_lines(path)) {
    if (blank(line)) continue;
    const json j = parse_json(line, path);
    const std::string id = j.value("id", "");
    if (j.contains("question_ids")) {
      if (!vocab) {
        if (vocab_path.empty()) {
          throw Error(ErrorKind::InvalidInput, "decoding prepared references needs --vocab");
        }
        vocab = Vocab::load_file(vocab_path);
      }
      const auto ids = j.at("question_ids").get<std::vector<int>>();
      if (!ids.empty()) refs[id].push_back(decode(ids, *vocab));
    } else if (j.contains("question") && !j.at("question").get<std::string>().empty()) {
      refs[id].push_back(j.at("question").get<std::string>());
    }
  }
  return refs;
}

int cmd_eval_gen(const EvalGenArgs& a, std::ostream& out, std::ostream& err) {
  RunManifest m{"eval gen"};
  const auto gens = read_generations(a.candidates);
  const auto refs = read_references(a.references, a.vocab);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> ref_tokens;
  for (const auto& g : gens) {
    const auto it = refs.find(g.id);
    if (it == refs.end()) throw Error(ErrorKind::InvalidInput, "no reference question for " + g.id);
    cands.push_back(metric_tokens(g.question_text));
    auto& r = ref_tokens.emplace_back();
    for (const auto& q : it->second) r.push_back(metric_tokens(q));
  }
  std::vector<SentenceScores> per;
  const MetricReport rep = evaluate_generation(cands, ref_tokens, &per);
  ojson j;
  j["bleu1"] = 100.0 * rep.bleu1;
  j["bleu4"] = 100.0 * rep.bleu4;
  j["meteor_lite"] = 100.0 * rep.meteor_lite;
  j["rouge_l"] = 100.0 * rep.rouge_l;
  j["n"] = rep.n;
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  if (!a.per_example.empty()) {
    std::ostringstream os;
    os << "id,bleu1,bleu4,meteor_lite,rouge_l\n";
    for (std::size_t i = 0; i < gens.size(); ++i) {
      os << gens[i].id << ',' << fixed17(100.0 * per[i].bleu1) << ','
         << fixed17(100.0 * per[i].bleu4) << ',' << fixed17(100.0 * per[i].meteor_lite) << ','
         << fixed17(100.0 * per[i].rouge_l) << '\n';
    }
    write_file(a.per_example, os.str());
  }
  if (!a.out.empty()) {
    m.inputs = {a.candidates, a.references};
    m.outputs = {a.out};
    if (!a.per_example.empty()) m.outputs.push_back(a.per_example);
    m.write(a.out + ".manifest.json");
  }
  err << "evaluated " << rep.n << " questions\n";
  return kExitOk;
}

struct EvalQaArgs {
  std::vector<std::string> generations;  // TAG=path
  std::string contexts;
  std::string vocab;
  std::string scorer = "lexical";
  std::string out_dir;
  std::string context_source = "article";
};

// Contexts by id from prepared JSONL or raw news JSONL.
std::map<std::string, std::vector<int>> read_contexts(const std::string& path, const Vocab& vocab,
                                                      const std::string& source) {
  std::map<std::string, std::vector<int>> out;
  for (const auto& line : read_lines(path)) {
    if (blank(line)) continue;
    const json j = parse_json(line, path);
    const std::string id = j.value("id", "");
    if (source == "article" && j.contains("context_ids")) {
      out.emplace(id, j.at("context_ids").get<std::vector<int>>());
    } else if (source == "article" && j.contains("article")) {
      out.emplace(id, encode(strip_news_article(j.at("article").get<std::string>()), vocab));
    } else if (source == "highlights" && j.contains("highlights")) {
      const auto& h = j.at("highlights");
      std::string text;
      if (h.is_array()) {
        for (const auto& s : h) text += (text.empty() ? "" : " ") + s.get<std::string>();
      } else {
        text = h.get<std::string>();
      }
      out.emplace(id, encode(text, vocab));
    } else {
      throw Error(ErrorKind::InvalidInput, "context record " + id + " has no " + source + " text");
    }
  }
  return out;
}

int cmd_eval_qa(const EvalQaArgs& a, std::ostream& err) {
  RunManifest m{"eval qa"};
  if (a.context_source != "article" && a.context_source != "highlights") {
    throw Error(ErrorKind::InvalidInput, "context source must be article or highlights");
  }
  const Vocab vocab = Vocab::load_file(a.vocab);
  const auto contexts = read_contexts(a.contexts, vocab, a.context_source);
  std::unique_ptr<QaScorer> scorer;
  if (a.scorer == "lexical") {
    scorer = std::make_unique<LexicalOverlapScorer>();
  } else {
    auto joint = JointQaScorer::load(strip_checkpoint_suffix(a.scorer));
    if (joint.config().vocab_size != vocab.size()) {
      throw Error(ErrorKind::ConfigError, "QA checkpoint and vocabulary sizes differ");
    }
    scorer = std::make_unique<JointQaScorer>(std::move(joint));
  }

  std::vector<ScatterRow> rows;
  for (const auto& entry : a.generations) {
    const auto eq = entry.find('=');
    const std::string tag = eq == std::string::npos ? fs::path(entry).stem().string() : entry.substr(0, eq);
    const std::string path = eq == std::string::npos ? entry : entry.substr(eq + 1);
    const auto gens = read_generations(path);
    std::vector<ScatterRow> part(gens.size());
    std::vector<std::vector<int>> questions(gens.size());
    for (std::size_t i = 0; i < gens.size(); ++i) {
      if (!contexts.count(gens[i].id)) {
        throw Error(ErrorKind::InvalidInput, "no context for " + gens[i].id);
      }
      questions[i] = encode(gens[i].question_text, vocab);
    }
    parallel_for(gens.size(), [&](std::size_t i) {
      const QaScores s = qa_score(*scorer, questions[i], contexts.at(gens[i].id));
      part[i] = {gens[i].id, s.s_ans, s.s_gra, tag};
    });
    rows.insert(rows.end(), part.begin(), part.end());
    m.inputs.push_back(path);
  }
  const fs::path dir(a.out_dir);
  write_file((dir / "scatter.csv").string(), scatter_csv(rows));
  write_file((dir / "score_means.csv").string(), score_means_csv(rows));
  write_file((dir / "scatter.svg").string(), scatter_svg(rows));
  m.config = {{"scorer", a.scorer}, {"context_source", a.context_source}};
  m.inputs.push_back(a.contexts);
  m.outputs = {(dir / "scatter.csv").string(), (dir / "score_means.csv").string(),
               (dir / "scatter.svg").string()};
  m.write((dir / "manifest.json").string());
  err << "scored " << rows.size() << " questions\n";
  return kExitOk;
}

struct CorrelateArgs {
  std::string annotations;
  std::string scores;
  std::string model_tag;
  std::string out;
  std::string unanimity;
};

std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  std::vector<AnnotationRecord> out;
  for (const auto& line : read_lines(path)) {
    if (blank(line)) continue;
    const json j = parse_json(line, path);
    AnnotationRecord r;
    try {
      r.article_id = j.at("article_id").get<std::string>();
      r.annotator_id = j.value("annotator_id", "");
      const json& f = j.at("flags");
      if (f.is_array()) {
        if (f.size() != kNumFlags) throw Error(ErrorKind::InvalidInput, "annotations need 7 flags");
        for (std::size_t i = 0; i < kNumFlags; ++i) r.flags[i] = f.at(i).get<bool>();
      } else {
        if (f.size() != kNumFlags) throw Error(ErrorKind::InvalidInput, "annotations need 7 flags");
        for (std::size_t i = 0; i < kNumFlags; ++i) {
          r.flags[i] = f.at(std::string(kFlagNames[i])).get<bool>();
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::FormatError, path + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Scatter CSV rows averaged per id, optionally filtered by tag.
std::map<std::string, ArticleScores> read_article_scores(const std::string& path,
                                                         const std::string& tag) {
  std::map<std::string, std::pair<ArticleScores, std::size_t>> acc;
  const auto lines = read_lines(path);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (blank(lines[k])) continue;
    std::vector<std::string> cells;
    std::istringstream is(lines[k]);
    std::string cell;
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw Error(ErrorKind::FormatError, path + ": short CSV row");
    if (!tag.empty() && (cells.size() < 4 || cells[3] != tag)) continue;
    auto& [s, n] = acc[cells[0]];
    try {
      s.s_ans += std::stod(cells[1]);
      s.s_gra += std::stod(cells[2]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::FormatError, path + ": bad score value");
    }
    ++n;
  }
  std::map<std::string, ArticleScores> out;
  for (const auto& [id, p] : acc) {
    out[id] = {p.first.s_ans / static_cast<double>(p.second),
               p.first.s_gra / static_cast<double>(p.second)};
  }
  return out;
}

int cmd_eval_correlate(const CorrelateArgs& a, std::ostream& out, std::ostream& err) {
  RunManifest m{"eval correlate"};
  const auto ann = read_annotations(a.annotations);
  const auto scores = read_article_scores(a.scores, a.model_tag);
  const std::string text = correlation_json(correlate_annotations(ann, scores));
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
    m.outputs.push_back(a.out);
  }
  if (!a.unanimity.empty()) {
    std::vector<std::string> flags(kFlagNames.begin(), kFlagNames.end());
    ojson u = ojson::object();
    for (const auto& flag : flags) {
      const auto r = unanimity_ratios(ann, std::span<const std::string>(&flag, 1)).at(flag);
      u[flag] = {{"true_pct", r.true_pct}, {"false_pct", r.false_pct}, {"unanimous", r.unanimous}};
    }
    write_file(a.unanimity, u.dump(2) + "\n");
    m.outputs.push_back(a.unanimity);
  }
  if (!m.outputs.empty()) {
    m.config = {{"model_tag", a.model_tag}};
    m.inputs = {a.annotations, a.scores};
    m.write(m.outputs.front() + ".manifest.json");
  }
  err << "correlated " << ann.size() << " annotations over " << scores.size() << " articles\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train-qa

struct TrainQaArgs {
  std::string data;
  std::string vocab;
  std::string out;
  std::string preset = "toy";
  std::optional<std::size_t> max_context;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

int cmd_train_qa(const TrainQaArgs& a, std::ostream& err) {
  RunManifest m{"train-qa"};
  const Vocab vocab = Vocab::load_file(a.vocab);
  ModelConfig c = preset_config(a.preset, vocab.size());
  if (a.max_context) c.max_context = *a.max_context;
  JointQaScorer scorer(c, a.seed);
  const auto losses = scorer.train(read_examples(a.data), {a.epochs, a.lr, a.batch_size, a.seed});
  const std::string prefix = strip_checkpoint_suffix(a.out);
  scorer.save(prefix);
  if (!losses.empty()) err << "final QA loss " << losses.back() << '\n';
  m.config = ojson::parse(config_to_json(c));
  m.config["epochs"] = a.epochs;
  m.config["lr"] = a.lr;
  m.config["batch_size"] = a.batch_size;
  m.seed = a.seed;
  m.inputs = {a.data, a.vocab};
  m.outputs = {prefix + ".json", prefix + ".bin"};
  m.write(prefix + ".manifest.json");
  return kExitOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NumericalError:
    case ErrorKind::TrainingDiverged:
    case ErrorKind::InvalidLoss:
      return kExitNumerical;
    default:
      return kExitInput;
  }
}

}  // namespace

std::string example_to_json(const PreparedExample& ex) {
  ojson j;
  j["id"] = ex.id;
  j["context_ids"] = ex.context_ids;
  j["type_ids"] = ex.type_ids;
  j["question_ids"] = ex.question_ids;
  j["answer_kind"] = to_string(ex.answer_kind);
  return j.dump();
}

PreparedExample example_from_json(const std::string& line) {
  const json j = parse_json(line, "prepared example");
  PreparedExample ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.context_ids = j.at("context_ids").get<std::vector<int>>();
    ex.type_ids = j.at("type_ids").get<std::vector<int>>();
    ex.question_ids = j.value("question_ids", std::vector<int>{});
    ex.answer_kind = answer_kind_from_string(j.value("answer_kind", "LONG"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("prepared example: ") + e.what());
  }
  return ex;
}

std::vector<PreparedExample> read_examples(const std::string& path) {
  std::vector<PreparedExample> out;
  for (const auto& line : read_lines(path)) {
    if (!blank(line)) out.push_back(example_from_json(line));
  }
  return out;
}

void write_examples(const std::string& path, const std::vector<PreparedExample>& examples) {
  std::string text;
  for (const auto& ex : examples) text += example_to_json(ex) + "\n";
  write_file(path, text);
}

std::string git_describe() {
  const std::string cmd =
      std::string("git -C \"") + SQGEN_SOURCE_DIR + "\" describe --always --dirty 2>/dev/null";
  std::string out;
  if (FILE* p = ::popen(cmd.c_str(), "r")) {
    std::array<char, 256> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), p)) out += buf.data();
    ::pclose(p);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Suggested-question generation toolkit", "sqgen"};
  app.require_subcommand(1);

  VocabArgs va;
  auto* vocab_cmd = app.add_subcommand("vocab", "Train a BPE vocabulary");
  vocab_cmd->add_option("--input", va.inputs, "Text or JSONL files")->required()->check(CLI::ExistingFile);
  vocab_cmd->add_option("--out", va.out)->required();
  vocab_cmd->add_option("--size", va.size);
  vocab_cmd->add_flag("--no-lowercase", va.no_lowercase);

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Tokenize and tag raw records");
  prep->add_option("--kind", pa.kind)->check(CLI::IsMember({"nq", "news"}));
  prep->add_option("--input", pa.input)->required()->check(CLI::ExistingFile);
  prep->add_option("--out", pa.out)->required();
  prep->add_option("--vocab", pa.vocab)->required()->check(CLI::ExistingFile);
  prep->add_option("--max-context", pa.max_context);
  prep->add_option("--max-question", pa.max_question);
  prep->add_option("--max-news", pa.max_news);
  prep->add_option("--context-source", pa.context_source)->check(CLI::IsMember({"article", "highlights"}));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the question generator");
  tr->add_option("--data", ta.data)->required()->check(CLI::ExistingFile);
  tr->add_option("--dev", ta.dev)->check(CLI::ExistingFile);
  tr->add_option("--vocab", ta.vocab)->required()->check(CLI::ExistingFile);
  tr->add_option("--out-dir", ta.out_dir)->required();
  tr->add_option("--config", ta.config)->check(CLI::ExistingFile);
  tr->add_option("--preset", ta.preset)->check(CLI::IsMember({"toy", "default", "full"}));
  tr->add_option("--seed", ta.seed);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--lr", ta.lr);
  tr->add_option("--batch-size", ta.batch_size);
  tr->add_option("--max-context", ta.max_context);
  tr->add_option("--max-question", ta.max_question);
  tr->add_option("--split-ratio", ta.split_ratio);
  tr->add_flag("--no-pointer", ta.no_pointer);
  tr->add_flag("--no-decoder-lm", ta.no_decoder_lm);
  tr->add_flag("--no-type-ids", ta.no_type_ids);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate questions from prepared contexts");
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--vocab", ga.vocab)->required()->check(CLI::ExistingFile);
  gen->add_option("--data", ga.data)->required()->check(CLI::ExistingFile);
  gen->add_option("--out", ga.out)->required();
  gen->add_option("--mode", ga.mode)->check(CLI::IsMember({"beam", "greedy", "nucleus"}));
  gen->add_option("--beam", ga.beam)->check(CLI::PositiveNumber);
  gen->add_option("--top-p", ga.top_p);
  gen->add_option("--temperature", ga.temperature);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--max-question", ga.max_question);
  gen->add_option("--max-context", ga.max_context);

  auto* ev = app.add_subcommand("eval", "Evaluate generations");
  ev->require_subcommand(1);
  EvalGenArgs ega;
  auto* ev_gen = ev->add_subcommand("gen", "Reference-based metrics");
  ev_gen->add_option("--candidates", ega.candidates)->required()->check(CLI::ExistingFile);
  ev_gen->add_option("--references", ega.references)->required()->check(CLI::ExistingFile);
  ev_gen->add_option("--vocab", ega.vocab);
  ev_gen->add_option("--out", ega.out);
  ev_gen->add_option("--per-example", ega.per_example);
  EvalQaArgs eqa;
  auto* ev_qa = ev->add_subcommand("qa", "Answerability and granularity scores");
  ev_qa->add_option("--generations", eqa.generations, "TAG=path, repeatable")->required();
  ev_qa->add_option("--contexts", eqa.contexts)->required()->check(CLI::ExistingFile);
  ev_qa->add_option("--vocab", eqa.vocab)->required()->check(CLI::ExistingFile);
  ev_qa->add_option("--scorer", eqa.scorer, "lexical or a QA checkpoint prefix");
  ev_qa->add_option("--out-dir", eqa.out_dir)->required();
  ev_qa->add_option("--context-source", eqa.context_source)->check(CLI::IsMember({"article", "highlights"}));
  CorrelateArgs eca;
  auto* ev_cor = ev->add_subcommand("correlate", "Correlate scores with annotations");
  ev_cor->add_option("--annotations", eca.annotations)->required()->check(CLI::ExistingFile);
  ev_cor->add_option("--scores", eca.scores)->required()->check(CLI::ExistingFile);
  ev_cor->add_option("--model-tag", eca.model_tag);
  ev_cor->add_option("--out", eca.out);
  ev_cor->add_option("--unanimity", eca.unanimity);

  TrainQaArgs qa;
  auto* trqa = app.add_subcommand("train-qa", "Train the joint QA scorer");
  trqa->add_option("--data", qa.data)->required()->check(CLI::ExistingFile);
  trqa->add_option("--vocab", qa.vocab)->required()->check(CLI::ExistingFile);
  trqa->add_option("--out", qa.out)->required();
  trqa->add_option("--preset", qa.preset)->check(CLI::IsMember({"toy", "default", "full"}));
  trqa->add_option("--max-context", qa.max_context);
  trqa->add_option("--epochs", qa.epochs);
  trqa->add_option("--lr", qa.lr);
  trqa->add_option("--batch-size", qa.batch_size);
  trqa->add_option("--seed", qa.seed);

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (vocab_cmd->parsed()) return cmd_vocab(va, err);
    if (prep->parsed()) return cmd_prepare(pa, err);
    if (tr->parsed()) return cmd_train(ta, err);
    if (gen->parsed()) return cmd_generate(ga, err);
    if (ev_gen->parsed()) return cmd_eval_gen(ega, out, err);
    if (ev_qa->parsed()) return cmd_eval_qa(eqa, err);
    if (ev_cor->parsed()) return cmd_eval_correlate(eca, out, err);
    if (trqa->parsed()) return cmd_train_qa(qa, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace sqgen::cli
