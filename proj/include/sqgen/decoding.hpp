#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "sqgen/corpus.hpp"
#include "sqgen/model.hpp"
#include "sqgen/textproc.hpp"

namespace sqgen {

// Next-token distribution for a BOS-initiated prefix.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::vector<double> next(std::span<const int> prefix) const = 0;
};

// Wraps a trained model with one encoded context. Encoding happens once.
class PgnStepModel final : public StepModel {
 public:
  PgnStepModel(const Model& model, std::span<const int> context_ids, std::span<const int> type_ids);
  std::vector<double> next(std::span<const int> prefix) const override;

 private:
  const Model& model_;
  std::vector<int> context_ids_;
  EncoderOutput encoded_;
};

class FunctionStepModel final : public StepModel {
 public:
  using Fn = std::function<std::vector<double>(std::span<const int>)>;
  explicit FunctionStepModel(Fn fn) : fn_(std::move(fn)) {}
  std::vector<double> next(std::span<const int> prefix) const override { return fn_(prefix); }

 private:
  Fn fn_;
};

struct Hypothesis {
  std::vector<int> ids;  // starts with BOS
  double logprob = 0.0;
  bool finished = false;

  // Tokens generated after BOS (EOS included).
  std::size_t generated() const noexcept { return ids.empty() ? 0 : ids.size() - 1; }
  double score(bool length_normalize) const;
};

struct DecodeOptions {
  std::size_t max_len = 50;
  int bos = kBos;
  int eos = kEos;
};

struct BeamOptions : DecodeOptions {
  std::size_t beam = 3;
  bool length_normalize = true;
};

struct NucleusOptions : DecodeOptions {
  double top_p = 0.9;
  double temperature = 0.1;
  std::uint64_t seed = 0;
};

// Hypotheses ranked by score, best first.
std::vector<Hypothesis> beam_search(const StepModel& model, const BeamOptions& options = {});

// Argmax per step; ties go to the lowest id.
Hypothesis greedy(const StepModel& model, const DecodeOptions& options = {});

Hypothesis nucleus_sample(const StepModel& model, const NucleusOptions& options = {});

// Temperature-scaled, top-p truncated and renormalized distribution.
std::vector<double> nucleus_distribution(std::span<const double> dist, double top_p,
                                         double temperature);

// Draws one token id from `dist` with the nucleus rule using `rng`.
int sample_token(std::span<const double> dist, double top_p, double temperature,
                 std::mt19937_64& rng);

// Questions are generated without their BOS/EOS.
std::vector<int> strip_specials(const Hypothesis& h, const DecodeOptions& options = {});

}  // namespace sqgen
