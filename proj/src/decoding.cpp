#include "sqgen/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sqgen/error.hpp"

namespace sqgen {

namespace {

constexpr double kGreedyTemperature = 1e-6;

std::size_t argmax(std::span<const double> dist) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = i;
  }
  return best;
}

std::vector<double> checked_next(const StepModel& model, std::span<const int> prefix) {
  std::vector<double> dist = model.next(prefix);
  if (dist.empty()) throw Error(ErrorKind::NumericalError, "empty next-token distribution");
  for (double p : dist) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorKind::NumericalError, "invalid next-token probability");
    }
  }
  return dist;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

PgnStepModel::PgnStepModel(const Model& model, std::span<const int> context_ids,
                           std::span<const int> type_ids)
    : model_(model), context_ids_(context_ids.begin(), context_ids.end()) {
  nn::NoGradGuard no_grad;
  encoded_ = model_.encode_context(context_ids, type_ids);
}

std::vector<double> PgnStepModel::next(std::span<const int> prefix) const {
  nn::NoGradGuard no_grad;
  return model_.decode_step(prefix, encoded_, context_ids_).final_dist;
}

double Hypothesis::score(bool length_normalize) const {
  if (!length_normalize || generated() == 0) return logprob;
  return logprob / static_cast<double>(generated());
}

std::vector<Hypothesis> beam_search(const StepModel& model, const BeamOptions& options) {
  if (options.beam == 0) throw Error(ErrorKind::ConfigError, "beam must be at least 1");
  std::vector<Hypothesis> alive{{{options.bos}, 0.0, false}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double logprob;
  };
  for (std::size_t step = 0; step < options.max_len && !alive.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const std::vector<double> dist = checked_next(model, alive[b].ids);
      for (std::size_t w = 0; w < dist.size(); ++w) {
        if (dist[w] > 0.0) {
          candidates.push_back({b, static_cast<int>(w), alive[b].logprob + std::log(dist[w])});
        }
      }
    }
    // Stable: equal scores keep (beam, token) order.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
    std::vector<Hypothesis> next_alive;
    for (std::size_t k = 0; k < std::min(options.beam, candidates.size()); ++k) {
      const auto& c = candidates[k];
      Hypothesis h{alive[c.parent].ids, c.logprob, false};
      h.ids.push_back(c.token);
      if (c.token == options.eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_alive.push_back(std::move(h));
      }
    }
    alive = std::move(next_alive);
  }
  std::vector<Hypothesis> ranked = std::move(finished);
  for (auto& h : alive) ranked.push_back(std::move(h));
  std::stable_sort(ranked.begin(), ranked.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return a.score(options.length_normalize) > b.score(options.length_normalize);
  });
  return ranked;
}

Hypothesis greedy(const StepModel& model, const DecodeOptions& options) {
  Hypothesis h{{options.bos}, 0.0, false};
  while (h.generated() < options.max_len) {
    const std::vector<double> dist = checked_next(model, h.ids);
    const std::size_t w = argmax(dist);
    h.logprob += std::log(dist[w]);
    h.ids.push_back(static_cast<int>(w));
    if (static_cast<int>(w) == options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

std::vector<double> nucleus_distribution(std::span<const double> dist, double top_p,
                                         double temperature) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::ConfigError, "top_p must be in (0, 1]");
  if (!(temperature > 0.0)) throw Error(ErrorKind::ConfigError, "temperature must be positive");
  std::vector<double> scaled(dist.size(), 0.0);
  if (temperature <= kGreedyTemperature) {
    scaled[argmax(dist)] = 1.0;
    return scaled;
  }
  // p^(1/T), computed in log space against the largest logit.
  double max_logit = -INFINITY;
  for (double p : dist) {
    if (p > 0.0) max_logit = std::max(max_logit, std::log(p) / temperature);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > 0.0) {
      scaled[i] = std::exp(std::log(dist[i]) / temperature - max_logit);
      total += scaled[i];
    }
  }
  for (double& v : scaled) v /= total;

  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scaled[a] > scaled[b]; });
  std::vector<double> kept(dist.size(), 0.0);
  double mass = 0.0;
  for (std::size_t i : order) {
    if (scaled[i] <= 0.0) break;
    kept[i] = scaled[i];
    mass += scaled[i];
    if (mass >= top_p * (1.0 - 1e-12)) break;
  }
  for (double& v : kept) v /= mass;
  return kept;
}

int sample_token(std::span<const double> dist, double top_p, double temperature,
                 std::mt19937_64& rng) {
  const std::vector<double> kept = nucleus_distribution(dist, top_p, temperature);
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] <= 0.0) continue;
    acc += kept[i];
    last = i;
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(last);
}

Hypothesis nucleus_sample(const StepModel& model, const NucleusOptions& options) {
  std::mt19937_64 rng(options.seed);
  Hypothesis h{{options.bos}, 0.0, false};
  while (h.generated() < options.max_len) {
    const std::vector<double> dist = checked_next(model, h.ids);
    const int w = sample_token(dist, options.top_p, options.temperature, rng);
    h.logprob += std::log(dist[static_cast<std::size_t>(w)]);
    h.ids.push_back(w);
    if (w == options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

std::vector<int> strip_specials(const Hypothesis& h, const DecodeOptions& options) {
  std::vector<int> out;
  for (std::size_t i = 0; i < h.ids.size(); ++i) {
    if (i == 0 && h.ids[i] == options.bos) continue;
    if (h.ids[i] == options.eos) break;
    out.push_back(h.ids[i]);
  }
  return out;
}

}  // namespace sqgen
