#include "sqgen/genmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "sqgen/error.hpp"
#include "sqgen/textproc.hpp"

namespace sqgen {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                      tokens.begin() + static_cast<long>(i + n))];
  }
  return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Depth-first search over alignments with a node budget; the first path
// extends chunks greedily so the incumbent is good early.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& cand, const Tokens& ref) : cand_(cand), ref_(ref), used_(ref.size()) {
    std::map<std::string, std::size_t> cc;
    std::map<std::string, std::size_t> rc;
    for (const auto& w : cand) ++cc[w];
    for (const auto& w : ref) ++rc[w];
    for (const auto& [w, n] : cc) {
      const auto it = rc.find(w);
      const std::size_t m = it == rc.end() ? 0 : std::min(n, it->second);
      quota_[w] = m;
      remaining_[w] = n;
      matches_ += m;
    }
  }

  Alignment run() {
    if (matches_ == 0) return {};
    best_ = std::numeric_limits<std::size_t>::max();
    search(0, -1, 0);
    return {matches_, best_};
  }

 private:
  static constexpr std::size_t kBudget = 200000;

  void search(std::size_t i, long prev_ref, std::size_t chunks) {
    if (chunks >= best_ || nodes_++ > kBudget) return;
    if (i == cand_.size()) {
      best_ = chunks;
      return;
    }
    const std::string& w = cand_[i];
    std::size_t& quota = quota_[w];
    std::size_t& remaining = remaining_[w];
    --remaining;
    if (quota > 0) {
      --quota;
      auto try_ref = [&](std::size_t j) {
        used_[j] = true;
        const bool extends = prev_ref >= 0 && static_cast<long>(j) == prev_ref + 1;
        search(i + 1, static_cast<long>(j), chunks + (extends ? 0 : 1));
        used_[j] = false;
      };
      const long next = prev_ref + 1;
      if (prev_ref >= 0 && static_cast<std::size_t>(next) < ref_.size() &&
          !used_[static_cast<std::size_t>(next)] && ref_[static_cast<std::size_t>(next)] == w) {
        try_ref(static_cast<std::size_t>(next));
      }
      for (std::size_t j = 0; j < ref_.size(); ++j) {
        if (static_cast<long>(j) == next && prev_ref >= 0) continue;
        if (!used_[j] && ref_[j] == w) try_ref(j);
      }
      ++quota;
    }
    // Leaving this position unmatched is only allowed if the quota still fits.
    if (remaining >= quota) search(i + 1, -1, chunks);
    ++remaining;
  }

  const Tokens& cand_;
  const Tokens& ref_;
  std::vector<bool> used_;
  std::map<std::string, std::size_t> quota_;
  std::map<std::string, std::size_t> remaining_;
  std::size_t matches_ = 0;
  std::size_t best_ = 0;
  std::size_t nodes_ = 0;
};

}  // namespace

Tokens metric_tokens(std::string_view text) {
  const std::string norm = normalize_text(text, true);
  Tokens out;
  std::size_t i = 0;
  while (i < norm.size()) {
    const auto sp = norm.find(' ', i);
    const std::size_t end = sp == std::string::npos ? norm.size() : sp;
    out.emplace_back(norm.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

double bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references,
            std::size_t max_n) {
  if (candidates.empty()) throw Error(ErrorKind::InvalidInput, "no candidates");
  if (candidates.size() != references.size()) {
    throw Error(ErrorKind::InvalidInput, "candidate and reference counts differ");
  }
  if (max_n == 0) throw Error(ErrorKind::InvalidInput, "max_n must be positive");
  std::vector<std::size_t> clipped(max_n, 0);
  std::vector<std::size_t> totals(max_n, 0);
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Tokens& cand = candidates[k];
    const auto& refs = references[k];
    if (refs.empty()) throw Error(ErrorKind::InvalidInput, "candidate without references");
    cand_len += cand.size();
    // Closest reference length, shorter on ties.
    std::size_t closest = refs.front().size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (d(r.size()) < d(closest) || (d(r.size()) == d(closest) && r.size() < closest)) {
        closest = r.size();
      }
    }
    ref_len += closest;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const NgramCounts cc = count_ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : cc) {
        const auto it = max_ref.find(g);
        clipped[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
        totals[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (clipped[n] == 0 || totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped[n]) / static_cast<double>(totals[n]));
  }
  const double bp = cand_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

double rouge_l(const Tokens& candidate, std::span<const Tokens> references, double beta) {
  if (references.empty()) throw Error(ErrorKind::InvalidInput, "rouge_l needs a reference");
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty() || candidate.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

Alignment align_unigrams(const Tokens& candidate, const Tokens& reference) {
  return ChunkSearch(candidate, reference).run();
}

double meteor_lite(const Tokens& candidate, const Tokens& reference, const MeteorParams& p) {
  const Alignment a = align_unigrams(candidate, reference);
  if (a.matches == 0) return 0.0;
  const auto m = static_cast<double>(a.matches);
  const double precision = m / static_cast<double>(candidate.size());
  const double recall = m / static_cast<double>(reference.size());
  const double fmean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
  const double penalty = p.gamma * std::pow(static_cast<double>(a.chunks) / m, p.theta);
  return fmean * (1.0 - penalty);
}

MetricReport evaluate_generation(std::span<const Tokens> candidates,
                                 std::span<const std::vector<Tokens>> references,
                                 std::vector<SentenceScores>* per_example) {
  MetricReport report;
  report.n = candidates.size();
  report.bleu1 = bleu(candidates, references, 1);
  report.bleu4 = bleu(candidates, references, 4);
  double meteor_sum = 0.0;
  double rouge_sum = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    double best_meteor = 0.0;
    for (const auto& r : references[k]) {
      best_meteor = std::max(best_meteor, meteor_lite(candidates[k], r));
    }
    const double rl = rouge_l(candidates[k], references[k]);
    meteor_sum += best_meteor;
    rouge_sum += rl;
    if (per_example) {
      SentenceScores s;
      const std::span<const Tokens> one(&candidates[k], 1);
      const std::span<const std::vector<Tokens>> one_ref(&references[k], 1);
      s.bleu1 = bleu(one, one_ref, 1);
      s.bleu4 = bleu(one, one_ref, 4);
      s.meteor_lite = best_meteor;
      s.rouge_l = rl;
      per_example->push_back(s);
    }
  }
  report.meteor_lite = meteor_sum / static_cast<double>(candidates.size());
  report.rouge_l = rouge_sum / static_cast<double>(candidates.size());
  return report;
}

}  // namespace sqgen
