#pragma once

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "selfteach/records.hpp"

namespace selfteach {

// Reads QA JSONL. Malformed lines raise ParseError; invariant violations raise
// ValidationError naming the field. Both carry the line number.
std::vector<QAInstance> parse_qa(const std::filesystem::path& path);

// Duplicate key: NFC + trimmed + whitespace-collapsed question, followed by the
// sorted normalized options. The answer index is not part of the key.
std::string dedupe_key(const QAInstance& qa);

// Keeps the first occurrence of every key, preserving input order.
std::vector<QAInstance> dedupe(std::span<const QAInstance> instances);

struct CoverageReport {
  std::set<std::string> covered_subjects;
  std::size_t total_subjects = 0;
  double fraction_titled = 0.0;  // share of titles naming at least one subject
};

// A subject is covered when its name is a substring of some title. Latin letters
// compare case-insensitively; other scripts compare exactly.
CoverageReport estimate_subject_coverage(std::span<const std::string> exam_titles,
                                         std::span<const std::string> subjects);

struct StatsReport {
  std::size_t n_instances = 0;
  double avg_num_options = 0.0;
  double avg_question_len_chars = 0.0;
  double avg_option_len_chars = 0.0;
  double avg_context_len_chars = 0.0;
  std::size_t char_vocab_size = 0;
  double non_extractive_pct = 0.0;
};

// Lengths count Unicode scalar values. An instance is non-extractive when its
// correct option is not a substring of its context.
StatsReport corpus_stats(std::span<const WeakMCInstance> dataset);

Json to_json(const CoverageReport& report);
Json to_json(const StatsReport& report);

}  // namespace selfteach
