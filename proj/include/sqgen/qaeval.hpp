#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sqgen/corpus.hpp"
#include "sqgen/model.hpp"

namespace sqgen {

enum class AnswerType : std::size_t { Undetermined = 0, LongAnswer = 1, ShortAnswer = 2, YesNo = 3 };
inline constexpr std::size_t kNumAnswerTypes = 4;

// Start/end distributions over positions 0..n, where 0 is the no-answer
// sentinel and 1..n index context tokens.
struct QaOutput {
  std::vector<double> p_start;
  std::vector<double> p_end;
  std::array<double, kNumAnswerTypes> type_probs{};

  std::size_t context_length() const noexcept { return p_start.empty() ? 0 : p_start.size() - 1; }
  double p_long() const noexcept { return type_probs[static_cast<std::size_t>(AnswerType::LongAnswer)]; }
  double p_short() const noexcept { return type_probs[static_cast<std::size_t>(AnswerType::ShortAnswer)]; }
  // Throws InvalidInput unless every vector is a distribution (±1e-6).
  void validate() const;
};

struct SpanChoice {
  std::size_t start = 0;
  std::size_t end = 0;
  double p_ans = 0.0;
};

// argmax p_start(i) * p_end(j) over 1 <= i < j <= n; ties to the smallest (i, j).
SpanChoice best_span(const QaOutput& out);

double no_answer_prob(const QaOutput& out);

inline constexpr double kProbabilityFloor = 1e-12;

// ln(p_ans / p_no_ans) with both floored at 1e-12.
double answerability(double p_ans, double p_no_ans);
// ln(p_la / p_sa) with both floored at 1e-12.
double granularity(double p_la, double p_sa);

struct QaScores {
  double s_ans = 0.0;
  double s_gra = 0.0;
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  double p_ans = 0.0;
  double p_no_ans = 0.0;
};

// Maps (question, context) token ids to span and type probabilities.
class QaScorer {
 public:
  virtual ~QaScorer() = default;
  virtual QaOutput score(std::span<const int> question, std::span<const int> context) const = 0;
};

QaScores qa_score(const QaScorer& scorer, std::span<const int> question,
                  std::span<const int> context);

// Deterministic stub. With J the Jaccard overlap of the unigram sets, the
// sentinel gets 1 - J in both vectors; the remaining J sits on the first
// (p_start) and last (p_end) position of the longest context run that also
// occurs contiguously in the question, widened to two positions when the run
// is a single token. Type probabilities are [1 - J, J * c, J * (1 - c), 0]
// with c the run's share of the context.
class LexicalOverlapScorer final : public QaScorer {
 public:
  QaOutput score(std::span<const int> question, std::span<const int> context) const override;
};

struct JointQaTrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

// Small joint QA model: encoder over [CLS] question [SEP] context with
// start/end heads over {CLS} + context tokens and a 4-way type head on CLS.
class JointQaScorer final : public QaScorer {
 public:
  // Uses the encoder fields of `config`; max_context bounds the full input.
  JointQaScorer(const ModelConfig& config, std::uint64_t seed);

  QaOutput score(std::span<const int> question, std::span<const int> context) const override;

  // Positives tag the example's first answer run; negatives pair each question
  // with the next example's context and target the sentinel.
  std::vector<double> train(std::span<const PreparedExample> examples,
                            const JointQaTrainConfig& cfg);

  const ModelConfig& config() const noexcept { return config_; }
  void save(const std::string& prefix) const;
  static JointQaScorer load(const std::string& prefix);

 private:
  struct Target {
    std::vector<int> question;
    std::vector<int> context;
    std::size_t start;
    std::size_t end;
    AnswerType type;
  };
  struct Forward {
    nn::Var log_start;  // [1, n+1]
    nn::Var log_end;
    nn::Var type;       // [1, 4] probabilities
  };
  Forward forward(std::span<const int> question, std::span<const int> context) const;
  std::size_t context_budget(std::size_t question_len) const;

  ModelConfig config_;
  ParameterSet params_;
  nn::Var word_;
  nn::Var position_;
  nn::Var segment_;
  std::vector<BlockParams> blocks_;
  nn::Linear start_head_;
  nn::Linear end_head_;
  nn::Linear type_head_;
};

// Sample Pearson correlation. Throws DegenerateInput for zero variance and
// InvalidInput for mismatched or too-short inputs.
double pearson(std::span<const double> x, std::span<const double> y);

// (x - mean) / population stddev.
std::vector<double> zscore(std::span<const double> x);

inline constexpr std::size_t kNumFlags = 7;
inline constexpr std::array<std::string_view, kNumFlags> kFlagNames = {
    "context", "irrelevant", "contradiction", "peripheral", "span", "entire", "none"};

std::optional<std::size_t> flag_index(std::string_view name);

struct AnnotationRecord {
  std::string article_id;
  std::string annotator_id;
  std::array<bool, kNumFlags> flags{};
};

struct UnanimityRatio {
  double true_pct = 0.0;
  double false_pct = 0.0;
  std::size_t unanimous = 0;
};

// Articles must carry exactly three annotations; only unanimous articles count.
std::map<std::string, UnanimityRatio> unanimity_ratios(std::span<const AnnotationRecord> annotations,
                                                       std::span<const std::string> flags);

struct ArticleScores {
  double s_ans = 0.0;
  double s_gra = 0.0;
};

// Pearson correlation per flag x score between z-normalized article scores
// and the 0/1 flags of every annotation. Missing entries are degenerate.
using CorrelationTable = std::map<std::string, std::map<std::string, std::optional<double>>>;
CorrelationTable correlate_annotations(std::span<const AnnotationRecord> annotations,
                                       const std::map<std::string, ArticleScores>& scores);
std::string correlation_json(const CorrelationTable& table);

struct ScatterRow {
  std::string id;
  double s_ans = 0.0;
  double s_gra = 0.0;
  std::string model_tag;
};

// id,s_ans,s_gra,model_tag
std::string scatter_csv(std::span<const ScatterRow> rows);
// model_tag,n,mean_s_ans,mean_s_gra in first-seen tag order.
std::string score_means_csv(std::span<const ScatterRow> rows);
// Static s_ans (x) by s_gra (y) scatter, one colour per tag.
std::string scatter_svg(std::span<const ScatterRow> rows);

}  // namespace sqgen
