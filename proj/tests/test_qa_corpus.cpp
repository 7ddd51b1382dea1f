#include <doctest.h>

#include <algorithm>

#include "selfteach/errors.hpp"
#include "selfteach/qa_corpus.hpp"
#include "selfteach/unicode.hpp"
#include "test_util.hpp"

using namespace selfteach;
using selfteach::testing::TempDir;

namespace {

QAInstance qa(std::string id, std::string question, std::vector<std::string> options, int answer = 0) {
  QAInstance q;
  q.id = std::move(id);
  q.question = std::move(question);
  q.options = std::move(options);
  q.answer_index = answer;
  return q;
}

WeakMCInstance weak(std::string question, std::vector<std::string> options, int answer, std::string context) {
  WeakMCInstance w;
  w.id = "w";
  w.question = std::move(question);
  w.options = std::move(options);
  w.answer_index = answer;
  w.context = std::move(context);
  return w;
}

}  // namespace

TEST_CASE("parse_qa maps a schema line") {
  TempDir dir;
  const auto path = dir.write("qa.jsonl", R"({"id":"q1","question":"2+2=?","options":["3","4"],"answer_index":1})" "\n");
  const auto out = parse_qa(path);
  REQUIRE(out.size() == 1);
  CHECK(out[0].id == "q1");
  CHECK(out[0].options.size() == 2);
  CHECK(out[0].answer() == "4");
  CHECK_FALSE(out[0].exam_title.has_value());
}

TEST_CASE("parse_qa rejects an out-of-range answer index by field name and line") {
  TempDir dir;
  const auto path = dir.write("qa.jsonl",
                              R"({"id":"q0","question":"a","options":["x","y"],"answer_index":0})" "\n"
                              R"({"id":"q1","question":"b","options":["a","b","c","d"],"answer_index":5})" "\n");
  try {
    parse_qa(path);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "answer_index");
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("answer_index out of range") != std::string::npos);
    CHECK(e.code() == ExitCode::kData);
  }
}

TEST_CASE("parse_qa: empty file, blank lines, malformed JSON, duplicate ids") {
  TempDir dir;
  CHECK(parse_qa(dir.write("empty.jsonl", "")).empty());
  CHECK(parse_qa(dir.write("blank.jsonl", "\n\n")).empty());
  try {
    parse_qa(dir.write("bad.jsonl", R"({"id":"q0","question":"a","options":["x","y"],"answer_index":0})" "\n{oops\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_qa(dir.write("dup.jsonl", R"({"id":"q","question":"a","options":["x","y"],"answer_index":0})" "\n"
                                                  R"({"id":"q","question":"b","options":["x","y"],"answer_index":0})" "\n")),
                  DataError);
  CHECK_THROWS_AS(parse_qa(dir.write("one.jsonl", R"({"id":"q","question":"a","options":["x"],"answer_index":0})" "\n")),
                  ValidationError);
  CHECK_THROWS_AS(parse_qa(dir.write("emptyopt.jsonl", R"({"id":"q","question":"a","options":["x",""],"answer_index":0})" "\n")),
                  ValidationError);
  CHECK_THROWS_AS(parse_qa(dir / "missing.jsonl"), DataError);
}

TEST_CASE("dedupe key normalization") {
  SUBCASE("trailing spaces in the question") {
    const std::vector<QAInstance> in = {qa("a", "what is x", {"1", "2"}), qa("b", "what is x   ", {"1", "2"})};
    const auto out = dedupe(in);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "a");
  }
  SUBCASE("same options in a different order") {
    const std::vector<QAInstance> in = {qa("a", "q", {"x", "y", "z"}), qa("b", "q", {"z", "x", "y"})};
    CHECK(dedupe(in).size() == 1);
  }
  SUBCASE("different correct answers over the same option set") {
    const std::vector<QAInstance> in = {qa("a", "q", {"x", "y"}, 0), qa("b", "q", {"x", "y"}, 1)};
    const auto out = dedupe(in);
    REQUIRE(out.size() == 1);
    CHECK(out[0].answer_index == 0);
  }
  SUBCASE("canonical composition and internal whitespace") {
    // "é" precomposed vs e + combining acute; tab and double space collapse.
    const std::vector<QAInstance> in = {qa("a", "caf\xC3\xA9 \t test", {"1", "2"}),
                                        qa("b", "cafe\xCC\x81  test", {"1", "2"})};
    CHECK(dedupe(in).size() == 1);
  }
  SUBCASE("different options survive") {
    const std::vector<QAInstance> in = {qa("a", "q", {"x", "y"}), qa("b", "q", {"x", "w"})};
    CHECK(dedupe(in).size() == 2);
  }
}

TEST_CASE("dedupe is idempotent, order-preserving and never grows") {
  std::vector<QAInstance> in;
  for (int i = 0; i < 60; ++i) {
    in.push_back(qa("id" + std::to_string(i), "question " + std::to_string(i % 17) + (i % 3 ? " " : ""),
                    {"opt" + std::to_string(i % 5), "other"}));
  }
  const auto once = dedupe(in);
  const auto twice = dedupe(once);
  CHECK(once == twice);
  CHECK(once.size() <= in.size());
  // Survivors appear in input order.
  std::size_t pos = 0;
  for (const auto& s : once) {
    while (pos < in.size() && in[pos].id != s.id) ++pos;
    CHECK(pos < in.size());
  }
}

TEST_CASE("subject coverage") {
  SUBCASE("substring rule") {
    const std::vector<std::string> titles = {"2018 sociology mock exam"};
    const std::vector<std::string> subjects = {"sociology", "ecology"};
    const auto r = estimate_subject_coverage(titles, subjects);
    CHECK(r.covered_subjects == std::set<std::string>{"sociology"});
    CHECK(r.total_subjects == 2);
    CHECK(r.fraction_titled == 1.0);
  }
  SUBCASE("empty titles") {
    const std::vector<std::string> titles;
    const std::vector<std::string> subjects = {"x"};
    const auto r = estimate_subject_coverage(titles, subjects);
    CHECK(r.covered_subjects.empty());
    CHECK(r.fraction_titled == 0.0);
  }
  SUBCASE("empty subject list is an error") {
    const std::vector<std::string> titles = {"t"};
    const std::vector<std::string> subjects;
    CHECK_THROWS_AS(estimate_subject_coverage(titles, subjects), ConfigError);
  }
  SUBCASE("Latin folds case, other scripts match exactly") {
    const std::vector<std::string> titles = {"Final SOCIOLOGY exam", "高三生物期末考试"};
    const std::vector<std::string> subjects = {"sociology", "生物", "化学"};
    const auto r = estimate_subject_coverage(titles, subjects);
    CHECK(r.covered_subjects == std::set<std::string>{"sociology", "生物"});
    CHECK(r.fraction_titled == 1.0);
  }
  SUBCASE("monotone in titles") {
    const std::vector<std::string> subjects = {"math", "art", "law"};
    std::vector<std::string> titles;
    std::size_t prev = 0;
    for (const char* t : {"art history", "contract law 101", "nothing", "math and art"}) {
      titles.push_back(t);
      const auto r = estimate_subject_coverage(titles, subjects);
      CHECK(r.covered_subjects.size() >= prev);
      CHECK(r.covered_subjects.size() <= r.total_subjects);
      CHECK(r.fraction_titled >= 0.0);
      CHECK(r.fraction_titled <= 1.0);
      prev = r.covered_subjects.size();
    }
    CHECK(estimate_subject_coverage(titles, subjects).fraction_titled == doctest::Approx(0.75));
  }
}

TEST_CASE("corpus statistics") {
  SUBCASE("answer present") {
    const std::vector<WeakMCInstance> d = {weak("abc", {"x", "yz"}, 0, "xabc")};
    const auto r = corpus_stats(d);
    CHECK(r.n_instances == 1);
    CHECK(r.avg_num_options == 2.0);
    CHECK(r.avg_question_len_chars == 3.0);
    CHECK(r.avg_option_len_chars == 1.5);
    CHECK(r.avg_context_len_chars == 4.0);
    CHECK(r.non_extractive_pct == 0.0);
    // a b c x y z
    CHECK(r.char_vocab_size == 6);
  }
  SUBCASE("answer absent") {
    const std::vector<WeakMCInstance> d = {weak("abc", {"x", "yz"}, 1, "xabc")};
    CHECK(corpus_stats(d).non_extractive_pct == 100.0);
  }
  SUBCASE("lengths count scalar values") {
    const std::vector<WeakMCInstance> d = {weak("北京大学", {"北京", "上海"}, 0, "北京")};
    const auto r = corpus_stats(d);
    CHECK(r.avg_question_len_chars == 4.0);
    CHECK(r.avg_option_len_chars == 2.0);
    CHECK(r.char_vocab_size == 6);
  }
  SUBCASE("empty dataset is an error") {
    const std::vector<WeakMCInstance> d;
    CHECK_THROWS_AS(corpus_stats(d), DataError);
  }
}

TEST_CASE("text helpers") {
  CHECK(text::length("北京a") == 3);
  CHECK(text::collapse_whitespace("  a \t\n b  ") == "a b");
  CHECK(text::is_punctuation(U'，'));
  CHECK(text::is_punctuation(U'?'));
  CHECK_FALSE(text::is_punctuation(U'a'));
  CHECK(text::is_whitespace(U'　'));
  CHECK(text::is_cjk(U'北'));
  CHECK(text::fold_latin(U'Q') == U'q');
  CHECK(text::fold_latin(U'Ж') == U'Ж');
  CHECK_THROWS_AS(text::decode("\xC3"), DataError);
  CHECK_THROWS_AS(text::decode("\xFF"), DataError);
  CHECK(text::encode(text::decode("héllo 北京")) == "héllo 北京");
}
