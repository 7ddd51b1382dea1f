#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "selfteach/records.hpp"
#include "selfteach/retrieval.hpp"

namespace selfteach {

// Joiner between surviving snippets. Extractive offsets depend on it, so it is
// recorded in every forge summary together with kForgeFormatVersion.
inline constexpr std::string_view kSnippetJoiner = " ";
inline constexpr int kForgeFormatVersion = 1;

enum class DropReason { kNoSnippets, kAnswerAbsent };
const char* to_string(DropReason reason);

struct Dropped {
  DropReason reason;
};

// Number of distinct options that occur as substrings of text.
std::size_t count_distinct_options(std::string_view text, std::span<const std::string> options);

// Leakage filter: keeps snippets in which at most one distinct option occurs.
std::vector<Snippet> filter_snippets(std::span<const Snippet> snippets, std::span<const std::string> options);

// Filters the snippets and joins the survivors in rank order.
std::variant<WeakMCInstance, Dropped> build_weak_mc(const QAInstance& qa, std::span<const Snippet> snippets);

// Span of the first mention of the correct option in the context.
std::variant<ExtractiveInstance, Dropped> to_extractive(const WeakMCInstance& weak);

// Deletes every occurrence of every wrong option (single left-to-right scan,
// longest match first at each position).
WeakMCInstance clean_context(const WeakMCInstance& weak);

struct ForgeOptions {
  int k = 10;
  bool extractive = false;
  bool clean_context = false;
  int jobs = 1;
};

struct ForgeSummary {
  std::size_t input = 0;
  std::size_t emitted_weak = 0;
  std::size_t emitted_extractive = 0;
  std::size_t emitted_clean = 0;
  std::map<std::string, std::size_t> drops;
};
Json to_json(const ForgeSummary& summary);

struct ForgeOutput {
  std::vector<WeakMCInstance> weak;
  std::vector<WeakMCInstance> cleaned;
  std::vector<ExtractiveInstance> extractive;
  ForgeSummary summary;
};

// Query = the question verbatim. Output order follows input order regardless of jobs.
ForgeOutput forge(std::span<const QAInstance> qa, SearchBackend& backend, SnippetCache* cache,
                  const ForgeOptions& options);

}  // namespace selfteach
