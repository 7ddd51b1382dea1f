#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "selfteach/errors.hpp"
#include "selfteach/retrieval.hpp"
#include "selfteach/unicode.hpp"
#include "test_util.hpp"

using namespace selfteach;
using selfteach::testing::TempDir;

namespace {

std::vector<Document> docs(std::initializer_list<const char*> texts) {
  std::vector<Document> out;
  int i = 0;
  for (const char* t : texts) out.push_back({"d" + std::to_string(i++), t});
  return out;
}

void check_ranks(const std::vector<Snippet>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].rank == static_cast<int>(i));
}

// Serves {"results":[{"snippet":..., "url":...}, ...]} echoing the query.
class FakeEngine {
 public:
  FakeEngine() {
    server_.Get("/search", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const std::string q = req.get_param_value("q");
      if (q == "boom") {
        res.status = 500;
        return;
      }
      Json body;
      body["results"] = Json::array();
      for (int i = 0; i < 12; ++i) {
        body["results"].push_back({{"snippet", q + " result " + std::to_string(i)}, {"url", "u" + std::to_string(i)}});
      }
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEngine() { stop(); }
  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/search?q={query}&n={k}"; }

  std::atomic<int> hits{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("term tokenization") {
  const auto terms = tokenize_terms(U"The Sky, is-blue 北京");
  const std::vector<std::u32string> expected = {U"the", U"sky", U"is", U"blue", U"北", U"京"};
  CHECK(terms == expected);
  CHECK(tokenize_terms(U"  ").empty());
}

TEST_CASE("local_rank scoring") {
  SUBCASE("term overlap picks document 0") {
    const auto corpus = docs({"the sky is blue", "grass is green"});
    const auto out = local_rank(corpus, "sky blue", 2);
    REQUIRE(out.size() == 1);
    CHECK(out[0].source_id == "d0");
    CHECK(out[0].text == "the sky is blue");
    CHECK(out[0].rank == 0);
  }
  SUBCASE("no matching term") {
    const auto corpus = docs({"alpha", "beta"});
    CHECK(local_rank(corpus, "gamma", 5).empty());
  }
  SUBCASE("ties go to the lower index") {
    const auto corpus = docs({"zzz", "red fox", "red hen"});
    const auto out = local_rank(corpus, "red", 5);
    REQUIRE(out.size() == 2);
    CHECK(out[0].source_id == "d1");
    CHECK(out[1].source_id == "d2");
    check_ranks(out);
  }
  SUBCASE("single document with one query term") {
    const auto corpus = docs({"one lonely term"});
    const auto out = local_rank(corpus, "term missing", 3);
    REQUIRE(out.size() == 1);
    CHECK(out[0].rank == 0);
  }
  SUBCASE("higher score wins over index") {
    const auto corpus = docs({"a b", "a b c"});
    const auto out = local_rank(corpus, "a b c", 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0].source_id == "d1");
  }
  SUBCASE("CJK characters are terms") {
    const auto corpus = docs({"上海天气", "北京大学在北京"});
    const auto out = local_rank(corpus, "北京", 2);
    REQUIRE(out.size() == 1);
    CHECK(out[0].source_id == "d1");
  }
  SUBCASE("window of at most 300 characters around the first match") {
    std::u32string body(1000, U'x');
    for (std::size_t i = 0; i < body.size(); i += 2) body[i] = U' ';
    body.replace(599, 8, U" needle ");
    const std::vector<Document> corpus = {{"big", text::encode(body)}};
    const auto out = local_rank(corpus, "needle", 1);
    REQUIRE(out.size() == 1);
    const auto snippet = text::decode(out[0].text);
    CHECK(snippet.size() == kSnippetWindow);
    const auto at = snippet.find(U"needle");
    REQUIRE(at != std::u32string::npos);
    // The window is centred on the middle of the match.
    CHECK(at == 150 - 3);
  }
  SUBCASE("window clamps at the document start") {
    std::u32string body = U"needle ";
    body += std::u32string(500, U'y');
    const std::vector<Document> corpus = {{"d", text::encode(body)}};
    const auto snippet = text::decode(local_rank(corpus, "needle", 1).at(0).text);
    CHECK(snippet.size() == kSnippetWindow);
    CHECK(snippet.rfind(U"needle", 0) == 0);
  }
}

TEST_CASE("search contract over the local backend") {
  LocalBackend backend(docs({"a b c", "a b", "a", "b c", "c"}));
  for (int k = 1; k <= 6; ++k) {
    const auto out = search(backend, "a b c", k);
    CHECK(static_cast<int>(out.size()) <= k);
    check_ranks(out);
  }
  CHECK(search(backend, "a", 1).size() == 1);
  CHECK(search(backend, "a b c", 3) == search(backend, "a b c", 3));
  CHECK(search(backend, "nothing", 3).empty());
  CHECK_THROWS_AS(search(backend, "a", 0), ConfigError);
  CHECK_THROWS_AS(search(backend, "", 3), ConfigError);
}

TEST_CASE("snippet cache round trip") {
  TempDir dir;
  SnippetCache cache(dir.path());
  const std::vector<Snippet> snippets = {{"北京 snippet \"quoted\"", 0, "u0"}, {"second", 1, "u1"}};
  CHECK_FALSE(cache.get("engine", "q", 2).has_value());
  cache.put("engine", "q", 2, snippets);
  const auto back = cache.get("engine", "q", 2);
  REQUIRE(back.has_value());
  CHECK(*back == snippets);
  CHECK(cache.path_for("engine", "q", 2).filename().string() == SnippetCache::key_digest("engine", "q", 2) + ".json");
  CHECK(SnippetCache::key_digest("engine", "q", 2) != SnippetCache::key_digest("engine", "q", 3));
  CHECK(SnippetCache::key_digest("engine", "q", 2) != SnippetCache::key_digest("other", "q", 2));
}

TEST_CASE("live backend writes through the cache and serves it offline") {
  TempDir dir;
  SnippetCache cache(dir.path());
  FakeEngine engine;
  HttpBackendConfig cfg;
  cfg.endpoint_template = engine.endpoint();
  cfg.timeout_seconds = 2;
  HttpBackend backend(cfg);

  const auto first = search(backend, "天气 sky", 3, &cache);
  REQUIRE(first.size() == 3);
  CHECK(first[0].text == "天气 sky result 0");
  CHECK(first[2].source_id == "u2");
  check_ranks(first);
  CHECK(engine.hits == 1);

  // A cache hit does not touch the engine.
  CHECK(search(backend, "天气 sky", 3, &cache) == first);
  CHECK(engine.hits == 1);

  CHECK_THROWS_AS(search(backend, "boom", 3, &cache), RetrievalError);

  engine.stop();
  CHECK(search(backend, "天气 sky", 3, &cache) == first);
  try {
    search(backend, "uncached question", 3, &cache);
    FAIL("expected a retrieval error");
  } catch (const RetrievalError& e) {
    CHECK(e.query() == "uncached question");
  }
}
