#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "sqgen/textproc.hpp"

namespace sqgen {

inline constexpr std::size_t kMaxContextTokens = 500;
inline constexpr std::size_t kMaxQuestionTokens = 50;
inline constexpr std::size_t kMaxNewsTokens = 490;

// Character offsets count Unicode code points, end exclusive.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct RawRecord {
  std::string id;
  std::string title;
  std::string question;
  std::string context;
  std::vector<CharSpan> short_spans;
  bool starts_with_paragraph_tag = true;
};

enum class AnswerKind { Long, Short };

const char* to_string(AnswerKind kind);
AnswerKind answer_kind_from_string(std::string_view s);

struct PreparedExample {
  std::string id;
  std::vector<int> context_ids;
  std::vector<int> type_ids;
  std::vector<int> question_ids;
  AnswerKind answer_kind = AnswerKind::Long;
};

struct Rejected {
  std::string reason;
};

using PrepareResult = std::variant<PreparedExample, Rejected>;

// Title and context joined by a space, with the answer region(s) wrapped in
// "[ " ... " ]". With no short spans the whole long answer is wrapped.
std::string bracket_answers(const RawRecord& record);

// Inverse of bracket_answers: the plain text plus the byte ranges that were
// inside markers (in plain-text coordinates).
struct StrippedText {
  std::string text;
  std::vector<std::pair<std::size_t, std::size_t>> tagged;
};
StrippedText strip_markers(std::string_view bracketed);

// The same text and ranges computed directly from the record's spans; this is
// what prepare_example tokenizes, so literal brackets in a context are safe.
StrippedText answer_regions(const RawRecord& record);

struct PrepareLimits {
  std::size_t max_context = kMaxContextTokens;
  std::size_t max_question = kMaxQuestionTokens;
};

PrepareResult prepare_example(const RawRecord& record, const Vocab& vocab,
                              const PrepareLimits& limits = {});

// Removes the "@highlight" block and a leading "... (CNN) --" dateline.
std::string strip_news_article(std::string_view article);

PrepareResult prepare_news(std::string_view article, const Vocab& vocab, std::string id = {},
                           std::size_t max_tokens = kMaxNewsTokens);

struct DatasetSplit {
  std::vector<PreparedExample> train;
  std::vector<PreparedExample> dev;
  std::uint64_t seed = 0;
};

DatasetSplit split_dataset(std::vector<PreparedExample> examples, double ratio,
                           std::uint64_t seed);

struct DatasetStats {
  std::size_t n_examples = 0;
  std::size_t n_unique_contexts = 0;
  double questions_per_context_mean = 0.0;
  std::size_t questions_per_context_max = 0;
};

DatasetStats dataset_stats(std::span<const PreparedExample> examples);

// Checks the PreparedExample invariants; throws InvalidInput on violation.
void validate_example(const PreparedExample& ex, std::size_t max_context = kMaxContextTokens);

}  // namespace sqgen
