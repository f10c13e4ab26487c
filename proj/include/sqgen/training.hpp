#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sqgen/corpus.hpp"
#include "sqgen/model.hpp"

namespace sqgen {

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch_size = 10;
  std::size_t epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Teacher-forced target: BOS + question as decoder input, question + EOS as gold.
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(std::span<const int> question_ids, std::size_t vocab_size);

// Summed -log final_dist(gold) over target positions, as a graph value.
struct LossTerm {
  nn::Var total;
  std::size_t tokens = 0;
};
LossTerm nll_terms(const Model& model, const PreparedExample& example);

// Mean per-token negative log-likelihood.
double nll_loss(const Model& model, const PreparedExample& example);

struct AdamState {
  std::vector<nn::Tensor> first_moment;
  std::vector<nn::Tensor> second_moment;
  std::size_t step = 0;
};

// One bias-corrected Adam update on a flat array.
void adam_update(std::span<double> params, std::span<const double> grads,
                 std::span<double> first_moment, std::span<double> second_moment,
                 std::size_t step, const TrainConfig& cfg);

// Updates every parameter from its accumulated gradient.
void adam_step(ParameterSet& params, AdamState& state, const TrainConfig& cfg);

double perplexity(const Model& model, std::span<const PreparedExample> dataset);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_perplexity = 0.0;
  double wall_seconds = 0.0;
};

// 1-based epoch of the smallest perplexity; ties go to the earliest.
std::size_t select_checkpoint(std::span<const double> dev_perplexities);

struct TrainResult {
  std::size_t best_epoch = 0;  // 0 means the initial parameters
  std::vector<EpochLog> log;
};

// Called after each epoch with the current model; return false to stop early.
using EpochCallback = std::function<bool(const EpochLog&, const Model&)>;

// Trains in place and leaves the best-by-dev-perplexity parameters in `model`.
TrainResult train(Model& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

std::string training_log_csv(std::span<const EpochLog> log);

}  // namespace sqgen
