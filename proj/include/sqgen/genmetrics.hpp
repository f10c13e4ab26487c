#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sqgen {

using Tokens = std::vector<std::string>;

// Lowercased whitespace tokens.
Tokens metric_tokens(std::string_view text);

// Corpus BLEU: clipped n-gram counts and lengths aggregated over the corpus,
// geometric mean of the n = 1..max_n precisions, brevity penalty against the
// closest reference length. Zero when any precision is zero.
double bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references,
            std::size_t max_n);

// LCS-based F-measure; the best reference wins.
inline constexpr double kRougeBeta = 1.2;
double rouge_l(const Tokens& candidate, std::span<const Tokens> references,
               double beta = kRougeBeta);

// Exact-match unigram METEOR: no stemming or synonyms.
struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double theta = 3.0;
};
double meteor_lite(const Tokens& candidate, const Tokens& reference, const MeteorParams& p = {});

// Fewest chunks over the maximum exact-match alignments; 0 when nothing matches.
struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
Alignment align_unigrams(const Tokens& candidate, const Tokens& reference);

// All fields in [0, 1]; reports multiply by 100.
struct MetricReport {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double meteor_lite = 0.0;
  double rouge_l = 0.0;
  std::size_t n = 0;
};

struct SentenceScores {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double meteor_lite = 0.0;
  double rouge_l = 0.0;
};

MetricReport evaluate_generation(std::span<const Tokens> candidates,
                                 std::span<const std::vector<Tokens>> references,
                                 std::vector<SentenceScores>* per_example = nullptr);

}  // namespace sqgen
