#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sqgen/error.hpp"
#include "sqgen/qaeval.hpp"
#include "sqgen/textproc.hpp"
#include "sqgen/training.hpp"

namespace sqgen {

using nn::Tensor;
using nn::Var;

JointQaScorer::JointQaScorer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  if (config_.max_context < 4) throw Error(ErrorKind::ConfigError, "max_context too small for QA");
  ParameterInit init(seed);
  const std::size_t d = config_.d_model;
  word_ = params_.add("qa.word_embedding", init.normal({config_.vocab_size, d}));
  position_ = params_.add("qa.position_embedding", init.normal({config_.max_context, d}));
  segment_ = params_.add("qa.segment_embedding", init.normal({2, d}));
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    blocks_.push_back(make_block(params_, init, "qa.layer" + std::to_string(i), d, config_.ffn_dim));
  }
  start_head_ = make_linear(params_, init, "qa.start_head", d, 1);
  end_head_ = make_linear(params_, init, "qa.end_head", d, 1);
  type_head_ = make_linear(params_, init, "qa.type_head", d, kNumAnswerTypes);
}

std::size_t JointQaScorer::context_budget(std::size_t question_len) const {
  if (question_len + 3 > config_.max_context) {
    throw Error(ErrorKind::QuestionTooLong, "question leaves no room for the context");
  }
  return config_.max_context - question_len - 2;
}

JointQaScorer::Forward JointQaScorer::forward(std::span<const int> question,
                                              std::span<const int> context) const {
  // Context tokens past the input budget are scored as impossible positions.
  const std::size_t kept = std::min(context.size(), context_budget(question.size()));
  std::vector<int> ids;
  std::vector<int> segments;
  ids.push_back(kBos);
  ids.insert(ids.end(), question.begin(), question.end());
  ids.push_back(kEos);
  segments.assign(ids.size(), 0);
  const std::size_t offset = ids.size();
  ids.insert(ids.end(), context.begin(), context.begin() + static_cast<std::ptrdiff_t>(kept));
  segments.resize(ids.size(), 1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw Error(ErrorKind::InvalidTokenId, "token id outside the vocabulary");
    }
  }
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);

  Var h = nn::add(nn::embedding(word_, ids), nn::embedding(position_, positions));
  if (config_.use_type_ids) h = nn::add(h, nn::embedding(segment_, segments));
  for (const auto& b : blocks_) h = transformer_block(h, b, config_.n_heads);

  // Row 0 (CLS) is the sentinel; rows 1.. are the kept context tokens.
  std::vector<int> gather{0};
  for (std::size_t i = 0; i < kept; ++i) gather.push_back(static_cast<int>(offset + i));
  const Var g = nn::embedding(h, gather);

  auto log_dist = [&](const nn::Linear& head) {
    Var logits = nn::transpose(head(g));  // [1, kept+1]
    if (kept < context.size()) {
      Tensor pad({1, context.size() - kept}, nn::kMaskValue);
      logits = nn::concat_cols({logits, nn::constant(pad)});
    }
    return nn::log(nn::softmax_rows(logits));
  };
  Forward f;
  f.log_start = log_dist(start_head_);
  f.log_end = log_dist(end_head_);
  f.type = nn::softmax_rows(type_head_(nn::slice_rows(h, 0, 1)));
  return f;
}

QaOutput JointQaScorer::score(std::span<const int> question, std::span<const int> context) const {
  nn::NoGradGuard no_grad;
  const Forward f = forward(question, context);
  QaOutput out;
  const auto& s = f.log_start.value();
  const auto& e = f.log_end.value();
  out.p_start.resize(s.size());
  out.p_end.resize(e.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.p_start[i] = std::exp(s[i]);
  for (std::size_t i = 0; i < e.size(); ++i) out.p_end[i] = std::exp(e[i]);
  // Renormalize away the log floor's rounding.
  for (auto* v : {&out.p_start, &out.p_end}) {
    const double total = std::accumulate(v->begin(), v->end(), 0.0);
    for (double& x : *v) x /= total;
  }
  for (std::size_t k = 0; k < kNumAnswerTypes; ++k) out.type_probs[k] = f.type.value()[k];
  return out;
}

std::vector<double> JointQaScorer::train(std::span<const PreparedExample> examples,
                                         const JointQaTrainConfig& cfg) {
  if (examples.empty()) throw Error(ErrorKind::InvalidDataset, "no QA training examples");
  std::vector<Target> targets;
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = examples[k];
    const std::size_t budget = context_budget(ex.question_ids.size());
    const auto first = std::find(ex.type_ids.begin(), ex.type_ids.end(), 1);
    if (first == ex.type_ids.end()) continue;
    const std::size_t a = static_cast<std::size_t>(first - ex.type_ids.begin());
    std::size_t b = a;
    while (b + 1 < ex.type_ids.size() && ex.type_ids[b + 1] == 1) ++b;
    if (b == a) b = a + 1 < ex.context_ids.size() ? a + 1 : a;
    if (b >= budget || a == b) continue;
    const AnswerType type =
        ex.answer_kind == AnswerKind::Long ? AnswerType::LongAnswer : AnswerType::ShortAnswer;
    targets.push_back({ex.question_ids, ex.context_ids, a + 1, b + 1, type});

    const auto& other = examples[(k + 1) % examples.size()];
    if (examples.size() > 1 && other.context_ids != ex.context_ids) {
      targets.push_back({ex.question_ids, other.context_ids, 0, 0, AnswerType::Undetermined});
    }
  }
  if (targets.empty()) throw Error(ErrorKind::InvalidDataset, "no usable QA training pairs");

  TrainConfig adam;
  adam.lr = cfg.lr;
  adam.batch_size = std::max<std::size_t>(1, cfg.batch_size);
  adam.seed = cfg.seed;
  adam.validate();
  AdamState state;
  std::vector<double> losses;
  std::vector<std::size_t> order(targets.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += adam.batch_size) {
      const std::size_t end = std::min(order.size(), b + adam.batch_size);
      params_.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const Target& t = targets[order[i]];
        const Forward f = forward(t.question, t.context);
        const int s = static_cast<int>(t.start), e = static_cast<int>(t.end);
        const int ty = static_cast<int>(t.type);
        const Var nll = nn::scale(
            nn::add(nn::add(nn::pick_cols(f.log_start, std::span<const int>(&s, 1)),
                            nn::pick_cols(f.log_end, std::span<const int>(&e, 1))),
                    nn::log(nn::pick_cols(f.type, std::span<const int>(&ty, 1)))),
            -1.0);
        const double value = nll.value()[0];
        if (!std::isfinite(value)) throw Error(ErrorKind::TrainingDiverged, "non-finite QA loss");
        total += value;
        nn::backward(nn::scale(nll, 1.0 / static_cast<double>(end - b)));
      }
      adam_step(params_, state, adam);
    }
    losses.push_back(total / static_cast<double>(targets.size()));
  }
  return losses;
}

void JointQaScorer::save(const std::string& prefix) const {
  save_parameters(params_, config_to_json(config_), "joint_qa", prefix);
}

JointQaScorer JointQaScorer::load(const std::string& prefix) {
  JointQaScorer scorer(config_from_json(read_checkpoint_config(prefix, "joint_qa")), 0);
  load_parameters(scorer.params_, "joint_qa", prefix);
  return scorer;
}

}  // namespace sqgen
