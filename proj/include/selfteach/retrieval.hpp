#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfteach/records.hpp"

namespace selfteach {

struct Snippet {
  std::string text;
  int rank = 0;
  std::string source_id;

  bool operator==(const Snippet&) const = default;
};

Json to_json(const Snippet& s);
Snippet snippet_from_json(const Json& j);

struct Document {
  std::string id;
  std::string text;
};

// JSONL of {"id": str, "text": str}.
std::vector<Document> read_documents(const std::filesystem::path& path);

// Search engine contract. Live backends may be nondeterministic; their answers
// are persisted through a SnippetCache by search().
class SearchBackend {
 public:
  virtual ~SearchBackend() = default;
  virtual const std::string& name() const = 0;
  virtual bool is_live() const = 0;
  virtual int max_results() const { return 10; }
  // Raw fetch; may throw RetrievalError when the engine cannot be reached.
  virtual std::vector<Snippet> fetch(const std::string& query, int k) = 0;
};

// Maximum snippet length in characters for the local backend.
inline constexpr std::size_t kSnippetWindow = 300;

// Query/document terms: whitespace-separated runs, with every CJK character a
// term of its own and punctuation acting as a separator. Latin letters fold case.
std::vector<std::u32string> tokenize_terms(std::u32string_view text);

// Scores each document by the number of distinct query terms it contains and
// returns the top k with score > 0 (ties by lower document index). Snippet text
// is a window of at most kSnippetWindow characters centered on the first match.
std::vector<Snippet> local_rank(std::span<const Document> corpus, std::string_view query, int k);

class LocalBackend final : public SearchBackend {
 public:
  explicit LocalBackend(std::vector<Document> corpus, std::string name = "local");
  const std::string& name() const override { return name_; }
  bool is_live() const override { return false; }
  std::vector<Snippet> fetch(const std::string& query, int k) override;

 private:
  struct Index;
  std::vector<Document> corpus_;
  std::string name_;
  std::shared_ptr<const Index> index_;
};

struct HttpBackendConfig {
  // e.g. "http://127.0.0.1:8080/search?q={query}&n={k}"
  std::string endpoint_template;
  int results_per_page = 10;
  // JSON pointer to the result array inside the response body.
  std::string result_path = "/results";
  std::string text_field = "snippet";
  std::string id_field = "url";
  int timeout_seconds = 10;
};

class HttpBackend final : public SearchBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config, std::string name = "http");
  const std::string& name() const override { return name_; }
  bool is_live() const override { return true; }
  int max_results() const override { return config_.results_per_page; }
  std::vector<Snippet> fetch(const std::string& query, int k) override;

 private:
  HttpBackendConfig config_;
  std::string name_;
};

// One JSON file per (backend, query, k) under a directory. Concurrent readers,
// serialized writers.
class SnippetCache {
 public:
  explicit SnippetCache(std::filesystem::path dir);

  static std::string key_digest(std::string_view backend, std::string_view query, int k);
  std::filesystem::path path_for(std::string_view backend, std::string_view query, int k) const;

  std::optional<std::vector<Snippet>> get(std::string_view backend, std::string_view query, int k) const;
  void put(std::string_view backend, std::string_view query, int k, const std::vector<Snippet>& snippets);

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
};

// Fetches at most k snippets with ranks 0..n-1. Live backends consult the cache
// first and write fresh answers through it; a miss while the backend is down is
// a RetrievalError carrying the query.
std::vector<Snippet> search(SearchBackend& backend, const std::string& query, int k,
                            SnippetCache* cache = nullptr);

}  // namespace selfteach
