#include "sqgen/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "sqgen/error.hpp"

namespace sqgen {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || batch_size == 0 || !(beta1 > 0.0 && beta1 < 1.0) ||
      !(beta2 > 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw Error(ErrorKind::ConfigError, "training hyperparameters must be positive");
  }
}

TeacherForcing teacher_forcing(std::span<const int> question_ids, std::size_t vocab_size) {
  if (question_ids.empty()) throw Error(ErrorKind::InvalidTarget, "empty target question");
  TeacherForcing tf;
  tf.inputs.push_back(kBos);
  for (int id : question_ids) {
    if (id == kPad) throw Error(ErrorKind::InvalidTarget, "PAD inside the target question");
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error(ErrorKind::InvalidTokenId, "target id outside the vocabulary");
    }
    tf.inputs.push_back(id);
    tf.targets.push_back(id);
  }
  tf.targets.push_back(kEos);
  return tf;
}

LossTerm nll_terms(const Model& model, const PreparedExample& example) {
  const TeacherForcing tf = teacher_forcing(example.question_ids, model.config().vocab_size);
  const EncoderOutput enc = model.encode_context(example.context_ids, example.type_ids);
  const DecoderOutputs dec = model.decode(tf.inputs, enc, example.context_ids);
  const nn::Var gold = nn::pick_cols(dec.final_dist, tf.targets);
  return {nn::scale(nn::sum(nn::log(gold)), -1.0), tf.targets.size()};
}

double nll_loss(const Model& model, const PreparedExample& example) {
  nn::NoGradGuard no_grad;
  const LossTerm t = nll_terms(model, example);
  return t.total.value()[0] / static_cast<double>(t.tokens);
}

void adam_update(std::span<double> params, std::span<const double> grads,
                 std::span<double> first_moment, std::span<double> second_moment,
                 std::size_t step, const TrainConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    first_moment[i] = cfg.beta1 * first_moment[i] + (1.0 - cfg.beta1) * g;
    second_moment[i] = cfg.beta2 * second_moment[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = first_moment[i] / bc1;
    const double v_hat = second_moment[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

void adam_step(ParameterSet& params, AdamState& state, const TrainConfig& cfg) {
  auto& items = params.items();
  if (state.first_moment.empty()) {
    for (const auto& p : items) {
      state.first_moment.emplace_back(p.var.value().shape(), 0.0);
      state.second_moment.emplace_back(p.var.value().shape(), 0.0);
    }
  }
  if (state.first_moment.size() != items.size()) {
    throw Error(ErrorKind::ConfigError, "optimizer state does not match the parameters");
  }
  ++state.step;
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& var = items[k].var;
    adam_update(var.mutable_value().values(), var.grad().values(),
                state.first_moment[k].values(), state.second_moment[k].values(), state.step, cfg);
  }
}

double perplexity(const Model& model, std::span<const PreparedExample> dataset) {
  if (dataset.empty()) throw Error(ErrorKind::InvalidDataset, "perplexity of an empty dataset");
  nn::NoGradGuard no_grad;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : dataset) {
    const LossTerm t = nll_terms(model, ex);
    total += t.total.value()[0];
    tokens += t.tokens;
  }
  return std::exp(total / static_cast<double>(tokens));
}

std::size_t select_checkpoint(std::span<const double> dev_perplexities) {
  if (dev_perplexities.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_perplexities.size(); ++i) {
    if (dev_perplexities[i] < dev_perplexities[best]) best = i;
  }
  return best + 1;
}

TrainResult train(Model& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult result;
  if (cfg.epochs == 0) return result;
  if (split.train.empty() || split.dev.empty()) {
    throw Error(ErrorKind::InvalidDataset, "training needs non-empty train and dev sets");
  }

  AdamState state;
  std::vector<nn::Tensor> best_params;
  double best_ppl = 0.0;
  std::vector<std::size_t> order(split.train.size());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
    }

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = b; i < end; ++i) {
        batch_tokens += split.train[order[i]].question_ids.size() + 1;
      }
      model.parameters().zero_grad();
      // Token-weighted mean over the batch, one graph per example.
      for (std::size_t i = b; i < end; ++i) {
        const LossTerm t = nll_terms(model, split.train[order[i]]);
        const double value = t.total.value()[0];
        if (!std::isfinite(value)) {
          throw Error(ErrorKind::TrainingDiverged, "non-finite loss in epoch " +
                                                       std::to_string(epoch));
        }
        epoch_loss += value;
        epoch_tokens += t.tokens;
        nn::backward(nn::scale(t.total, 1.0 / static_cast<double>(batch_tokens)));
      }
      adam_step(model.parameters(), state, cfg);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    entry.dev_perplexity = perplexity(model, split.dev);
    if (!std::isfinite(entry.dev_perplexity)) {
      throw Error(ErrorKind::TrainingDiverged, "non-finite dev perplexity");
    }
    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);

    if (best_params.empty() || entry.dev_perplexity < best_ppl) {
      best_ppl = entry.dev_perplexity;
      best_params = model.snapshot();
      result.best_epoch = epoch;
    }
    if (on_epoch && !on_epoch(entry, model)) break;
  }
  model.restore(best_params);
  return result;
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,dev_perplexity,wall_seconds\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_loss << ',' << e.dev_perplexity << ',' << e.wall_seconds
       << '\n';
  }
  return os.str();
}

}  // namespace sqgen
