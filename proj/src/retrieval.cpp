#include "selfteach/retrieval.hpp"

#include <httplib.h>

#include <algorithm>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "selfteach/digest.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {
namespace {

struct Term {
  std::u32string text;
  std::size_t pos;
};

std::vector<Term> terms_with_positions(std::u32string_view raw) {
  std::vector<Term> out;
  std::u32string current;
  std::size_t start = 0;
  const auto flush = [&] {
    if (!current.empty()) out.push_back({std::move(current), start});
    current.clear();
  };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char32_t c = raw[i];
    if (text::is_whitespace(c) || text::is_punctuation(c)) {
      flush();
    } else if (text::is_cjk(c)) {
      flush();
      out.push_back({std::u32string(1, c), i});
    } else {
      if (current.empty()) start = i;
      current.push_back(text::fold_latin(c));
    }
  }
  flush();
  return out;
}

// First position of every distinct term of one document.
using TermIndex = std::unordered_map<std::u32string, std::size_t>;

TermIndex index_document(std::u32string_view doc) {
  TermIndex index;
  for (auto& t : terms_with_positions(doc)) index.emplace(std::move(t.text), t.pos);
  return index;
}

struct Scored {
  std::size_t doc;
  std::size_t score;
  std::size_t first_pos;
  std::size_t first_len;
};

std::vector<Snippet> rank_indexed(std::span<const Document> corpus,
                                  std::span<const std::u32string> decoded,
                                  std::span<const TermIndex> indices, std::string_view query, int k) {
  if (k < 1) return {};
  std::vector<std::u32string> query_terms;
  {
    std::unordered_set<std::u32string> seen;
    for (auto& t : terms_with_positions(text::decode(query))) {
      if (seen.insert(t.text).second) query_terms.push_back(std::move(t.text));
    }
  }
  std::vector<Scored> scored;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    Scored s{d, 0, std::u32string::npos, 0};
    for (const auto& term : query_terms) {
      auto it = indices[d].find(term);
      if (it == indices[d].end()) continue;
      ++s.score;
      if (it->second < s.first_pos) {
        s.first_pos = it->second;
        s.first_len = term.size();
      }
    }
    if (s.score > 0) scored.push_back(s);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });
  if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));

  std::vector<Snippet> out;
  for (std::size_t r = 0; r < scored.size(); ++r) {
    const auto& doc = decoded[scored[r].doc];
    const std::size_t center = scored[r].first_pos + scored[r].first_len / 2;
    std::size_t begin = center > kSnippetWindow / 2 ? center - kSnippetWindow / 2 : 0;
    const std::size_t end = std::min(doc.size(), begin + kSnippetWindow);
    if (end - begin < kSnippetWindow) begin = end > kSnippetWindow ? end - kSnippetWindow : 0;
    out.push_back({text::encode(doc.substr(begin, end - begin)), static_cast<int>(r),
                   corpus[scored[r].doc].id});
  }
  return out;
}

std::string percent_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0x0F]);
    }
  }
  return out;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

Json to_json(const Snippet& s) {
  Json j;
  j["text"] = s.text;
  j["rank"] = s.rank;
  j["source_id"] = s.source_id;
  return j;
}

Snippet snippet_from_json(const Json& j) {
  Snippet s;
  s.text = j.at("text").get<std::string>();
  s.rank = j.at("rank").get<int>();
  s.source_id = j.at("source_id").get<std::string>();
  return s;
}

std::vector<Document> read_documents(const std::filesystem::path& path) {
  std::vector<Document> docs;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    Document d;
    d.id = j.contains("id") ? j.at("id").get<std::string>() : "doc" + std::to_string(line);
    if (!j.contains("text") || !j.at("text").is_string()) throw ValidationError("text", "missing field");
    d.text = j.at("text").get<std::string>();
    docs.push_back(std::move(d));
  });
  return docs;
}

std::vector<std::u32string> tokenize_terms(std::u32string_view text) {
  std::vector<std::u32string> out;
  for (auto& t : terms_with_positions(text)) out.push_back(std::move(t.text));
  return out;
}

std::vector<Snippet> local_rank(std::span<const Document> corpus, std::string_view query, int k) {
  std::vector<std::u32string> decoded;
  std::vector<TermIndex> indices;
  for (const auto& d : corpus) {
    decoded.push_back(text::decode(d.text));
    indices.push_back(index_document(decoded.back()));
  }
  return rank_indexed(corpus, decoded, indices, query, k);
}

struct LocalBackend::Index {
  std::vector<std::u32string> decoded;
  std::vector<TermIndex> terms;
};

LocalBackend::LocalBackend(std::vector<Document> corpus, std::string name)
    : corpus_(std::move(corpus)), name_(std::move(name)) {
  auto index = std::make_shared<Index>();
  for (const auto& d : corpus_) {
    index->decoded.push_back(text::decode(d.text));
    index->terms.push_back(index_document(index->decoded.back()));
  }
  index_ = std::move(index);
}

std::vector<Snippet> LocalBackend::fetch(const std::string& query, int k) {
  return rank_indexed(corpus_, index_->decoded, index_->terms, query, k);
}

HttpBackend::HttpBackend(HttpBackendConfig config, std::string name)
    : config_(std::move(config)), name_(std::move(name)) {}

std::vector<Snippet> HttpBackend::fetch(const std::string& query, int k) {
  std::string url = config_.endpoint_template;
  replace_all(url, "{query}", percent_encode(query));
  replace_all(url, "{k}", std::to_string(k));
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw RetrievalError(query, "endpoint lacks a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  const std::string host = url.substr(0, path_begin);
  const std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);

  httplib::Client client(host);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  auto res = client.Get(path);
  if (!res) throw RetrievalError(query, "backend unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw RetrievalError(query, "HTTP status " + std::to_string(res->status));

  std::vector<Snippet> out;
  try {
    const Json body = Json::parse(res->body);
    const Json& results = body.at(Json::json_pointer(config_.result_path));
    for (const auto& item : results) {
      if (static_cast<int>(out.size()) >= k) break;
      const auto text = item.value(config_.text_field, std::string{});
      if (text.empty()) continue;
      out.push_back({text, static_cast<int>(out.size()), item.value(config_.id_field, std::string{})});
    }
  } catch (const nlohmann::json::exception& e) {
    throw RetrievalError(query, std::string("unexpected response body: ") + e.what());
  }
  return out;
}

SnippetCache::SnippetCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string SnippetCache::key_digest(std::string_view backend, std::string_view query, int k) {
  Json key = Json::array({backend, query, k});
  return sha256_hex(key.dump());
}

std::filesystem::path SnippetCache::path_for(std::string_view backend, std::string_view query, int k) const {
  return dir_ / (key_digest(backend, query, k) + ".json");
}

std::optional<std::vector<Snippet>> SnippetCache::get(std::string_view backend, std::string_view query,
                                                      int k) const {
  std::shared_lock lock(mutex_);
  const auto path = path_for(backend, query, k);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::vector<Snippet> out;
  try {
    for (const auto& j : Json::parse(read_file(path))) out.push_back(snippet_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt cache entry " + path.string() + ": " + e.what());
  }
  return out;
}

void SnippetCache::put(std::string_view backend, std::string_view query, int k,
                       const std::vector<Snippet>& snippets) {
  std::unique_lock lock(mutex_);
  Json list = Json::array();
  for (const auto& s : snippets) list.push_back(to_json(s));
  const auto path = path_for(backend, query, k);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file(tmp, list.dump());
  std::filesystem::rename(tmp, path);
}

std::vector<Snippet> search(SearchBackend& backend, const std::string& query, int k, SnippetCache* cache) {
  if (k < 1) throw ConfigError("search: k must be >= 1");
  if (query.empty()) throw ConfigError("search: empty query");
  const bool cached = backend.is_live() && cache != nullptr;
  if (cached) {
    if (auto hit = cache->get(backend.name(), query, k)) return *hit;
  }
  std::vector<Snippet> result = backend.fetch(query, k);
  if (result.size() > static_cast<std::size_t>(k)) result.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < result.size(); ++i) result[i].rank = static_cast<int>(i);
  if (cached) cache->put(backend.name(), query, k, result);
  return result;
}

}  // namespace selfteach
