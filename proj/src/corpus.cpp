#include "sqgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "sqgen/error.hpp"

namespace sqgen {

namespace {

// Spans sorted by start and converted to byte offsets into the context.
std::vector<std::pair<std::size_t, std::size_t>> validated_byte_spans(const RawRecord& record) {
  if (record.context.empty()) {
    throw Error(ErrorKind::InvalidSpans, "record " + record.id + " has an empty context");
  }
  const auto offsets = codepoint_offsets(record.context);
  const std::size_t n_chars = offsets.size() - 1;
  std::vector<CharSpan> spans = record.short_spans;
  std::sort(spans.begin(), spans.end(),
            [](const CharSpan& a, const CharSpan& b) { return a.start < b.start; });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start >= s.end || s.end > n_chars) {
      throw Error(ErrorKind::InvalidSpans, "record " + record.id + " has span [" +
                                               std::to_string(s.start) + "," +
                                               std::to_string(s.end) + ") out of range");
    }
    if (i > 0 && spans[i - 1].end > s.start) {
      throw Error(ErrorKind::InvalidSpans, "record " + record.id + " has overlapping spans");
    }
    out.emplace_back(offsets[s.start], offsets[s.end]);
  }
  return out;
}

std::string joined_prefix(const RawRecord& record) {
  return record.title.empty() ? std::string() : record.title + " ";
}

}  // namespace

const char* to_string(AnswerKind kind) { return kind == AnswerKind::Long ? "LONG" : "SHORT"; }

AnswerKind answer_kind_from_string(std::string_view s) {
  if (s == "LONG") return AnswerKind::Long;
  if (s == "SHORT") return AnswerKind::Short;
  throw Error(ErrorKind::FormatError, "unknown answer kind: " + std::string(s));
}

std::string bracket_answers(const RawRecord& record) {
  auto spans = validated_byte_spans(record);
  if (spans.empty()) spans.emplace_back(0, record.context.size());
  std::string out = joined_prefix(record);
  std::size_t pos = 0;
  for (const auto& [b, e] : spans) {
    out.append(record.context, pos, b - pos);
    out.append("[ ");
    out.append(record.context, b, e - b);
    out.append(" ]");
    pos = e;
  }
  out.append(record.context, pos, std::string::npos);
  return out;
}

StrippedText strip_markers(std::string_view bracketed) {
  StrippedText out;
  out.text.reserve(bracketed.size());
  std::size_t open_at = 0;
  bool inside = false;
  std::size_t i = 0;
  while (i < bracketed.size()) {
    if (!inside && bracketed.compare(i, 2, "[ ") == 0) {
      inside = true;
      open_at = out.text.size();
      i += 2;
    } else if (inside && bracketed.compare(i, 2, " ]") == 0) {
      inside = false;
      out.tagged.emplace_back(open_at, out.text.size());
      i += 2;
    } else {
      out.text.push_back(bracketed[i++]);
    }
  }
  if (inside) throw Error(ErrorKind::InvalidSpans, "unterminated answer marker");
  return out;
}

StrippedText answer_regions(const RawRecord& record) {
  auto spans = validated_byte_spans(record);
  if (spans.empty()) spans.emplace_back(0, record.context.size());
  StrippedText out;
  out.text = joined_prefix(record);
  const std::size_t shift = out.text.size();
  out.text += record.context;
  for (const auto& [b, e] : spans) out.tagged.emplace_back(b + shift, e + shift);
  return out;
}

PrepareResult prepare_example(const RawRecord& record, const Vocab& vocab,
                              const PrepareLimits& limits) {
  // Markers never reach the tokenizer; the tagged ranges become type ids.
  const StrippedText stripped = answer_regions(record);
  if (!record.starts_with_paragraph_tag) return Rejected{"not_paragraph"};

  std::vector<int> byte_tags(stripped.text.size(), 0);
  for (const auto& [b, e] : stripped.tagged) std::fill(byte_tags.begin() + b, byte_tags.begin() + e, 1);

  TaggedIds ctx = encode_tagged(stripped.text, byte_tags, vocab);
  if (ctx.ids.size() > limits.max_context) return Rejected{"context_too_long"};
  if (std::none_of(ctx.tags.begin(), ctx.tags.end(), [](int t) { return t == 1; })) {
    return Rejected{"empty_answer"};
  }
  std::vector<int> question = encode(record.question, vocab);
  if (question.empty()) return Rejected{"empty_question"};
  if (question.size() > limits.max_question) return Rejected{"question_too_long"};

  PreparedExample ex;
  ex.id = record.id;
  ex.context_ids = std::move(ctx.ids);
  ex.type_ids = std::move(ctx.tags);
  ex.question_ids = std::move(question);
  ex.answer_kind = record.short_spans.empty() ? AnswerKind::Long : AnswerKind::Short;
  return ex;
}

std::string strip_news_article(std::string_view article) {
  std::string_view body = article;
  // Highlights start at the first "@highlight" line.
  for (std::size_t pos = body.find("@highlight"); pos != std::string_view::npos;
       pos = body.find("@highlight", pos + 1)) {
    if (pos == 0 || body[pos - 1] == '\n') {
      body = body.substr(0, pos);
      break;
    }
  }
  const auto first = body.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  body.remove_prefix(first);

  constexpr std::string_view kCnn = "(CNN)";
  constexpr std::size_t kDatelineWindow = 200;
  const auto line_end = body.find('\n');
  const auto cnn = body.find(kCnn);
  if (cnn != std::string_view::npos && cnn < kDatelineWindow &&
      (line_end == std::string_view::npos || cnn < line_end)) {
    std::size_t i = cnn + kCnn.size();
    auto skip_blank = [&] {
      while (i < body.size() && (body[i] == ' ' || body[i] == '\t')) ++i;
    };
    skip_blank();
    if (body.compare(i, 2, "--") == 0) {
      i += 2;
    } else if (body.compare(i, 3, "\xE2\x80\x94") == 0) {  // em dash
      i += 3;
    } else if (i < body.size() && (body[i] == '-' || body[i] == ':')) {
      ++i;
    }
    skip_blank();
    body.remove_prefix(i);
  }
  std::string out(body);
  while (!out.empty() && (out.back() == ' ' || out.back() == '\n' || out.back() == '\r' ||
                          out.back() == '\t')) {
    out.pop_back();
  }
  return out;
}

PrepareResult prepare_news(std::string_view article, const Vocab& vocab, std::string id,
                           std::size_t max_tokens) {
  const std::string body = strip_news_article(article);
  std::vector<int> ids = encode(body, vocab);
  if (ids.empty()) return Rejected{"empty"};
  if (ids.size() > max_tokens) return Rejected{"too_long"};
  PreparedExample ex;
  ex.id = std::move(id);
  ex.type_ids.assign(ids.size(), 1);
  ex.context_ids = std::move(ids);
  ex.answer_kind = AnswerKind::Long;
  return ex;
}

DatasetSplit split_dataset(std::vector<PreparedExample> examples, double ratio,
                           std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::InvalidRatio, "split ratio must lie in (0, 1)");
  }
  if (examples.empty()) throw Error(ErrorKind::InvalidDataset, "nothing to split");
  std::mt19937_64 rng(seed);
  for (std::size_t i = examples.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(examples[i], examples[j]);
  }
  const auto n = static_cast<double>(examples.size());
  const auto n_train = static_cast<std::size_t>(std::ceil(ratio * n - 1e-9));
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(std::make_move_iterator(examples.begin()),
                     std::make_move_iterator(examples.begin() + static_cast<long>(n_train)));
  split.dev.assign(std::make_move_iterator(examples.begin() + static_cast<long>(n_train)),
                   std::make_move_iterator(examples.end()));
  return split;
}

DatasetStats dataset_stats(std::span<const PreparedExample> examples) {
  DatasetStats stats;
  if (examples.empty()) return stats;
  std::map<std::vector<int>, std::size_t> per_context;
  for (const auto& ex : examples) ++per_context[ex.context_ids];
  stats.n_examples = examples.size();
  stats.n_unique_contexts = per_context.size();
  stats.questions_per_context_mean =
      static_cast<double>(stats.n_examples) / static_cast<double>(stats.n_unique_contexts);
  for (const auto& [ctx, n] : per_context) {
    stats.questions_per_context_max = std::max(stats.questions_per_context_max, n);
  }
  return stats;
}

void validate_example(const PreparedExample& ex, std::size_t max_context) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::InvalidInput, "example " + ex.id + ": " + why);
  };
  if (ex.context_ids.size() != ex.type_ids.size()) fail("context/type length mismatch");
  if (ex.context_ids.empty()) fail("empty context");
  if (ex.context_ids.size() > max_context) fail("context too long");
  if (std::any_of(ex.type_ids.begin(), ex.type_ids.end(), [](int t) { return t != 0 && t != 1; })) {
    fail("type ids must be 0 or 1");
  }
  if (std::none_of(ex.type_ids.begin(), ex.type_ids.end(), [](int t) { return t == 1; })) {
    fail("no answer tokens tagged");
  }
}

}  // namespace sqgen
