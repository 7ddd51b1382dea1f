#include <doctest.h>

#include <variant>

#include "selfteach/context_forge.hpp"
#include "selfteach/synthetic.hpp"
#include "selfteach/unicode.hpp"

using namespace selfteach;

namespace {

QAInstance make_qa(std::vector<std::string> options, int answer) {
  QAInstance q;
  q.id = "q";
  q.question = "question";
  q.options = std::move(options);
  q.answer_index = answer;
  return q;
}

WeakMCInstance make_weak(std::string context, std::vector<std::string> options, int answer) {
  WeakMCInstance w;
  w.id = "w";
  w.question = "question";
  w.context = std::move(context);
  w.options = std::move(options);
  w.answer_index = answer;
  return w;
}

std::vector<Snippet> snippets(std::initializer_list<const char*> texts) {
  std::vector<Snippet> out;
  int rank = 0;
  for (const char* t : texts) {
    out.push_back({t, rank, "s" + std::to_string(rank)});
    ++rank;
  }
  return out;
}

}  // namespace

TEST_CASE("leakage filter") {
  const std::vector<std::string> options = {"interest rate", "currency supply"};
  SUBCASE("both options present") {
    const auto s = snippets({"the interest rate and currency supply move together"});
    CHECK(filter_snippets(s, options).empty());
  }
  SUBCASE("only one option present") {
    const auto s = snippets({"the interest rate rose"});
    CHECK(filter_snippets(s, options).size() == 1);
  }
  SUBCASE("nested options count as two") {
    const std::vector<std::string> nested = {"6", "6.000000"};
    CHECK(count_distinct_options("the value is 6.000000", nested) == 2);
    CHECK(filter_snippets(snippets({"the value is 6.000000"}), nested).empty());
  }
  SUBCASE("repeats of one option do not trigger") {
    const auto s = snippets({"interest rate, interest rate, interest rate"});
    CHECK(count_distinct_options(s[0].text, options) == 1);
    CHECK(filter_snippets(s, options).size() == 1);
  }
  SUBCASE("output is an order-preserving subsequence") {
    const auto s = snippets({"interest rate", "interest rate currency supply", "none", "currency supply"});
    const auto kept = filter_snippets(s, options);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].rank == 0);
    CHECK(kept[1].rank == 2);
    CHECK(kept[2].rank == 3);
  }
}

TEST_CASE("build_weak_mc") {
  const auto qa = make_qa({"A", "B"}, 0);
  SUBCASE("join survivors with one space") {
    const auto s = snippets({"first A", "A and B", "third"});
    const auto out = build_weak_mc(qa, s);
    REQUIRE(std::holds_alternative<WeakMCInstance>(out));
    const auto& w = std::get<WeakMCInstance>(out);
    CHECK(w.context == "first A third");
    CHECK(w.provenance == Provenance::kWeak);
    CHECK(w.options == qa.options);
  }
  SUBCASE("rank order is used, not input order") {
    std::vector<Snippet> s = {{"second", 1, "b"}, {"first", 0, "a"}};
    CHECK(std::get<WeakMCInstance>(build_weak_mc(qa, s)).context == "first second");
  }
  SUBCASE("everything filtered") {
    const auto out = build_weak_mc(qa, snippets({"A B", "B A"}));
    REQUIRE(std::holds_alternative<Dropped>(out));
    CHECK(std::get<Dropped>(out).reason == DropReason::kNoSnippets);
  }
  SUBCASE("nothing retrieved") {
    const std::vector<Snippet> none;
    const auto out = build_weak_mc(qa, none);
    REQUIRE(std::holds_alternative<Dropped>(out));
    CHECK(std::string(to_string(std::get<Dropped>(out).reason)) == "no_snippets");
  }
}

TEST_CASE("first-mention extractive span") {
  SUBCASE("first of two mentions") {
    const auto out = to_extractive(make_weak("abcXYZdefXYZ", {"XYZ", "Q"}, 0));
    const auto& ex = std::get<ExtractiveInstance>(out);
    CHECK(ex.answer_start == 3);
    CHECK(ex.answer_end == 6);
    CHECK(ex.answer_text == "XYZ");
  }
  SUBCASE("at the start") {
    const auto out = to_extractive(make_weak("XYZdef", {"Q", "XYZ"}, 1));
    const auto& ex = std::get<ExtractiveInstance>(out);
    CHECK(ex.answer_start == 0);
    CHECK(ex.answer_end == 3);
  }
  SUBCASE("offsets count characters, not bytes") {
    const auto out = to_extractive(make_weak("今天北京天气", {"北京", "上海"}, 0));
    const auto& ex = std::get<ExtractiveInstance>(out);
    CHECK(ex.answer_start == 2);
    CHECK(ex.answer_end == 4);
    const auto ctx = text::decode(ex.context);
    CHECK(text::encode(ctx.substr(2, 2)) == "北京");
  }
  SUBCASE("answer absent") {
    const auto out = to_extractive(make_weak("nothing here", {"XYZ", "Q"}, 0));
    REQUIRE(std::holds_alternative<Dropped>(out));
    CHECK(std::string(to_string(std::get<Dropped>(out).reason)) == "answer_absent");
  }
}

TEST_CASE("clean_context") {
  CHECK(clean_context(make_weak("A or B", {"A", "B"}, 1)).context == " or B");
  CHECK(clean_context(make_weak("nothing wrong", {"A", "nothing"}, 1)).context == "nothing wrong");
  CHECK(clean_context(make_weak("A", {"A", "B"}, 1)).context.empty());
  SUBCASE("nested wrong options delete the longest match") {
    const auto w = clean_context(make_weak("6.000000 or 6 or 7", {"6", "6.000000", "7"}, 2));
    CHECK(w.context == " or  or 7");
  }
  SUBCASE("no wrong option remains") {
    const auto w = clean_context(make_weak("xABxBAx", {"x", "AB", "BA"}, 0));
    CHECK(w.context.find("AB") == std::string::npos);
    CHECK(w.context.find("BA") == std::string::npos);
  }
}

TEST_CASE("forge over the synthetic fixture") {
  const auto fx = synthetic::forge_fixture(50, 7);
  LocalBackend backend(fx.documents);
  ForgeOptions opt;
  opt.extractive = true;
  opt.clean_context = true;
  const auto a = forge(fx.qa, backend, nullptr, opt);
  CHECK(a.summary.input == 50);
  CHECK(a.summary.emitted_weak == a.weak.size());
  CHECK(a.summary.emitted_extractive == a.extractive.size());
  std::size_t dropped = 0;
  for (const auto& [reason, n] : a.summary.drops) dropped += reason == "no_snippets" ? n : 0;
  CHECK(a.weak.size() + dropped == 50);
  CHECK(a.summary.drops.count("no_snippets") == 1);
  CHECK(a.summary.drops.count("answer_absent") == 1);
  for (const auto& w : a.weak) CHECK_FALSE(w.context.empty());
  for (const auto& ex : a.extractive) {
    const auto ctx = text::decode(ex.context);
    CHECK(text::encode(ctx.substr(static_cast<std::size_t>(ex.answer_start),
                                  static_cast<std::size_t>(ex.answer_end - ex.answer_start))) == ex.answer_text);
  }
  opt.jobs = 4;
  const auto b = forge(fx.qa, backend, nullptr, opt);
  CHECK(a.weak == b.weak);
  CHECK(a.extractive == b.extractive);
  CHECK(a.cleaned == b.cleaned);
}
