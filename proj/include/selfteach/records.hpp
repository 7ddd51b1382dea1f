#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace selfteach {

using Json = nlohmann::ordered_json;

// A multiple-choice question as ingested from an exam aggregator.
struct QAInstance {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  int answer_index = 0;
  std::optional<std::string> exam_title;
  std::optional<std::string> subject;

  const std::string& answer() const { return options.at(static_cast<std::size_t>(answer_index)); }
  bool operator==(const QAInstance&) const = default;
};

enum class Provenance { kWeak, kClean };

// Multiple-choice MRC record: a QA instance plus a (possibly retrieved) context.
struct WeakMCInstance {
  std::string id;
  std::string context;
  std::string question;
  std::vector<std::string> options;
  int answer_index = 0;
  Provenance provenance = Provenance::kWeak;
  std::optional<std::string> exam_title;
  std::optional<std::string> subject;

  const std::string& answer() const { return options.at(static_cast<std::size_t>(answer_index)); }
  bool operator==(const WeakMCInstance&) const = default;
};

// Extractive MRC record. Offsets count Unicode scalar values; answer_end is exclusive.
struct ExtractiveInstance {
  std::string id;
  std::string context;
  std::string question;
  std::string answer_text;
  int answer_start = 0;
  int answer_end = 0;

  bool operator==(const ExtractiveInstance&) const = default;
};

// Invariant checks; throw ValidationError naming the offending field.
void validate(const QAInstance& qa);
void validate(const WeakMCInstance& mc);
void validate(const ExtractiveInstance& ex);

Json to_json(const QAInstance& qa);
Json to_json(const WeakMCInstance& mc);
Json to_json(const ExtractiveInstance& ex);

QAInstance qa_from_json(const Json& j);
WeakMCInstance weak_mc_from_json(const Json& j);
ExtractiveInstance extractive_from_json(const Json& j);

const char* to_string(Provenance p);

// JSONL helpers. Blank lines are skipped; errors carry the 1-based line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t line)>& fn);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

std::vector<WeakMCInstance> read_weak_mc(const std::filesystem::path& path);
std::vector<ExtractiveInstance> read_extractive(const std::filesystem::path& path);

template <class T>
std::vector<Json> to_json_rows(const std::vector<T>& items) {
  std::vector<Json> rows;
  rows.reserve(items.size());
  for (const auto& item : items) rows.push_back(to_json(item));
  return rows;
}

}  // namespace selfteach
