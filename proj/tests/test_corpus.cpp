#include <doctest.h>

#include <algorithm>
#include <set>

#include "sqgen/corpus.hpp"
#include "sqgen/error.hpp"
#include "sample_records.hpp"
#include "support.hpp"

using namespace sqgen;
using sqgen::testing::error_kind;
using sqgen::testing::jdk_record;
using sqgen::testing::permit_record;
using sqgen::testing::span_of;
using sqgen::testing::un_record;
using sqgen::testing::word_vocab;
using sqgen::testing::words;

namespace {

Vocab corpus_vocab() {
  std::vector<std::string> lines;
  for (const auto& r : {un_record(), permit_record(), jdk_record()}) {
    lines.push_back(r.title);
    lines.push_back(r.context);
    lines.push_back(r.question);
  }
  return train_vocab(lines, 400);
}

std::size_t count_runs(const std::vector<int>& tags) {
  std::size_t runs = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == 1 && (i == 0 || tags[i - 1] == 0)) ++runs;
  }
  return runs;
}

PreparedExample expect_prepared(const PrepareResult& r) {
  REQUIRE(std::holds_alternative<PreparedExample>(r));
  return std::get<PreparedExample>(r);
}

std::string expect_rejected(const PrepareResult& r) {
  REQUIRE(std::holds_alternative<Rejected>(r));
  return std::get<Rejected>(r).reason;
}

}  // namespace

TEST_CASE("bracketing wraps short spans after the title") {
  CHECK(bracket_answers(un_record()) ==
        "President of the United Nations General Assembly [ Miroslav Lajčák of Slovakia ] has "
        "been elected as the United Nations General Assembly President of its 72nd session "
        "beginning in September 2017.");
}

TEST_CASE("bracketing wraps the whole long answer without short spans") {
  const RawRecord r = jdk_record();
  CHECK(bracket_answers(r) == r.title + " [ " + r.context + " ]");
}

TEST_CASE("bracketing rejects invalid spans") {
  RawRecord r = un_record();
  r.context.clear();
  CHECK(error_kind([&] { bracket_answers(r); }) == ErrorKind::InvalidSpans);
  r = un_record();
  r.short_spans = {{0, 10}, {5, 12}};
  CHECK(error_kind([&] { bracket_answers(r); }) == ErrorKind::InvalidSpans);
  r.short_spans = {{3, 3}};
  CHECK(error_kind([&] { bracket_answers(r); }) == ErrorKind::InvalidSpans);
  r.short_spans = {{0, 10000}};
  CHECK(error_kind([&] { bracket_answers(r); }) == ErrorKind::InvalidSpans);
  CHECK(error_kind([&] { prepare_example(r, Vocab{}); }) == ErrorKind::InvalidSpans);
}

TEST_CASE("marker round trip reproduces the source text") {
  for (const auto& r : {un_record(), permit_record(), jdk_record()}) {
    const StrippedText s = strip_markers(bracket_answers(r));
    CHECK(s.text == r.title + " " + r.context);
    const StrippedText direct = answer_regions(r);
    CHECK(direct.text == s.text);
    CHECK(direct.tagged == s.tagged);
  }
  RawRecord two = un_record();
  two.short_spans = {span_of(two.context, "Slovakia"), span_of(two.context, "September 2017")};
  const StrippedText s = strip_markers(bracket_answers(two));
  CHECK(s.text == two.title + " " + two.context);
  REQUIRE(s.tagged.size() == 2);
  CHECK(s.text.substr(s.tagged[1].first, s.tagged[1].second - s.tagged[1].first) == "September 2017");
}

TEST_CASE("prepared short-answer example tags exactly the span tokens") {
  const Vocab v = corpus_vocab();
  const RawRecord r = un_record();
  const PreparedExample ex = expect_prepared(prepare_example(r, v));
  CHECK(ex.answer_kind == AnswerKind::Short);
  CHECK(ex.context_ids.size() == ex.type_ids.size());
  std::vector<int> tagged, untagged;
  for (std::size_t i = 0; i < ex.context_ids.size(); ++i) {
    (ex.type_ids[i] ? tagged : untagged).push_back(ex.context_ids[i]);
  }
  CHECK(decode(tagged, v) == "miroslav lajčák of slovakia");
  CHECK(decode(ex.context_ids, v) == normalize_text(r.title + " " + r.context));
  CHECK(decode(ex.question_ids, v) == r.question);
  CHECK(count_runs(ex.type_ids) == 1);
  // Title tokens carry type 0.
  const auto title_len = encode(r.title, v).size();
  for (std::size_t i = 0; i < title_len; ++i) CHECK(ex.type_ids[i] == 0);
}

TEST_CASE("prepared long-answer example tags the whole paragraph") {
  const Vocab v = corpus_vocab();
  const RawRecord r = jdk_record();
  const PreparedExample ex = expect_prepared(prepare_example(r, v));
  CHECK(ex.answer_kind == AnswerKind::Long);
  const auto title_len = encode(r.title, v).size();
  for (std::size_t i = 0; i < ex.type_ids.size(); ++i) CHECK(ex.type_ids[i] == (i < title_len ? 0 : 1));
  std::vector<int> tagged(ex.context_ids.begin() + static_cast<long>(title_len), ex.context_ids.end());
  CHECK(decode(tagged, v) == normalize_text(r.context));
}

TEST_CASE("k separated spans give k tagged runs") {
  const Vocab v = corpus_vocab();
  RawRecord r = permit_record();
  r.short_spans = {span_of(r.context, "driver operating"), span_of(r.context, "adult licensed"),
                   span_of(r.context, "passenger seat")};
  const PreparedExample ex = expect_prepared(prepare_example(r, v));
  CHECK(count_runs(ex.type_ids) == 3);
  validate_example(ex);
}

TEST_CASE("context and question length limits are exact") {
  const Vocab v = word_vocab(50);
  RawRecord r;
  r.id = "len";
  r.question = words(3);
  r.context = words(500);
  CHECK(expect_prepared(prepare_example(r, v)).context_ids.size() == 500);
  r.context = words(501);
  CHECK(expect_rejected(prepare_example(r, v)) == "context_too_long");
  r.context = words(20);
  r.question = words(50);
  CHECK(expect_prepared(prepare_example(r, v)).question_ids.size() == 50);
  r.question = words(51);
  CHECK(expect_rejected(prepare_example(r, v)) == "question_too_long");
  // The title counts toward the context length.
  r.question = words(3);
  r.title = sqgen::testing::word_text(1);
  r.context = words(500);
  CHECK(expect_rejected(prepare_example(r, v)) == "context_too_long");
}

TEST_CASE("other rejection reasons") {
  const Vocab v = word_vocab(50);
  RawRecord r;
  r.context = words(5);
  r.question = words(2);
  r.starts_with_paragraph_tag = false;
  CHECK(expect_rejected(prepare_example(r, v)) == "not_paragraph");
  r.starts_with_paragraph_tag = true;
  r.question = "   ";
  CHECK(expect_rejected(prepare_example(r, v)) == "empty_question");
}

TEST_CASE("news dateline and highlight stripping") {
  CHECK(strip_news_article("NEW DELHI, India (CNN) -- Body text.") == "Body text.");
  CHECK(strip_news_article("WASHINGTON (CNN) -- The vote passed.\nIt was close.\n\n@highlight\n\n"
                           "Vote passes\n\n@highlight\n\nClose margin") ==
        "The vote passed.\nIt was close.");
  CHECK(strip_news_article("No dateline here. (CNN) is not first\nsecond line") ==
        "is not first\nsecond line");
  CHECK(strip_news_article("Plain body without any marker.") == "Plain body without any marker.");
  CHECK(strip_news_article("LONDON, England (CNN) \xE2\x80\x94 Em dash body.") == "Em dash body.");
  CHECK(strip_news_article("ATLANTA, Georgia (CNN)  -- Double space.") == "Double space.");
  CHECK(strip_news_article("First line.\nLater (CNN) mention stays.") ==
        "First line.\nLater (CNN) mention stays.");
  CHECK(strip_news_article("@highlight\n\nonly highlights").empty());
}

TEST_CASE("news preparation") {
  const Vocab v = word_vocab(50);
  const PreparedExample ex = expect_prepared(prepare_news("PARIS, France (CNN) -- " + words(3), v, "n1"));
  CHECK(ex.id == "n1");
  CHECK(ex.context_ids.size() == 3);
  CHECK(std::all_of(ex.type_ids.begin(), ex.type_ids.end(), [](int t) { return t == 1; }));
  CHECK(ex.question_ids.empty());
  CHECK(ex.answer_kind == AnswerKind::Long);
  CHECK(expect_prepared(prepare_news(words(490), v)).context_ids.size() == 490);
  CHECK(expect_rejected(prepare_news(words(491), v)) == "too_long");
  CHECK(expect_rejected(prepare_news("SEOUL (CNN) -- \n@highlight\n" + words(2), v)) == "empty");
}

TEST_CASE("dataset splits") {
  std::vector<PreparedExample> xs = sqgen::testing::copy_task(10, 20, 1);
  const DatasetSplit s = split_dataset(xs, 0.9, 42);
  CHECK(s.train.size() == 9);
  CHECK(s.dev.size() == 1);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.dev}) {
    for (const auto& ex : *part) CHECK(ids.insert(ex.id).second);
  }
  CHECK(ids.size() == 10);
  const DatasetSplit again = split_dataset(xs, 0.9, 42);
  for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(again.train[i].id == s.train[i].id);
  CHECK(split_dataset(sqgen::testing::copy_task(110865, 8, 2, 4), 0.9, 0).train.size() == 99779);
  for (double bad : {0.0, 1.0, -0.5, 1.5}) {
    CHECK(error_kind([&] { split_dataset(xs, bad, 0); }) == ErrorKind::InvalidRatio);
  }
  CHECK(error_kind([] { split_dataset({}, 0.9, 0); }) == ErrorKind::InvalidDataset);
}

TEST_CASE("dataset statistics") {
  const DatasetStats empty = dataset_stats({});
  CHECK(empty.n_examples == 0);
  CHECK(empty.n_unique_contexts == 0);
  CHECK(empty.questions_per_context_mean == 0.0);
  CHECK(empty.questions_per_context_max == 0);
  std::vector<PreparedExample> xs(3);
  xs[0].context_ids = {4, 5};
  xs[1].context_ids = {4, 5};
  xs[2].context_ids = {6};
  const DatasetStats s = dataset_stats(xs);
  CHECK(s.n_examples == 3);
  CHECK(s.n_unique_contexts == 2);
  CHECK(s.questions_per_context_mean == doctest::Approx(1.5));
  CHECK(s.questions_per_context_max == 2);
}

TEST_CASE("example validation") {
  PreparedExample ex;
  ex.id = "v";
  ex.context_ids = {4, 5};
  ex.type_ids = {0, 1};
  validate_example(ex);
  ex.type_ids = {0, 0};
  CHECK(error_kind([&] { validate_example(ex); }) == ErrorKind::InvalidInput);
  ex.type_ids = {0};
  CHECK(error_kind([&] { validate_example(ex); }) == ErrorKind::InvalidInput);
  ex.type_ids = {2, 1};
  CHECK(error_kind([&] { validate_example(ex); }) == ErrorKind::InvalidInput);
}
