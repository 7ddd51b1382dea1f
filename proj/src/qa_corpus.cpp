#include "selfteach/qa_corpus.hpp"

#include <algorithm>
#include <unordered_set>

#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {
namespace {

std::string normalize(std::string_view s) { return text::collapse_whitespace(text::nfc(s)); }

// Separators that cannot appear in collapsed text.
constexpr char kFieldSep = '\x1f';
constexpr char kOptionSep = '\x1e';

}  // namespace

std::vector<QAInstance> parse_qa(const std::filesystem::path& path) {
  std::vector<QAInstance> out;
  std::unordered_set<std::string> ids;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    QAInstance qa = qa_from_json(j);
    if (!ids.insert(qa.id).second) throw ValidationError("id", "duplicate id " + qa.id);
    out.push_back(std::move(qa));
  });
  return out;
}

std::string dedupe_key(const QAInstance& qa) {
  std::vector<std::string> options;
  options.reserve(qa.options.size());
  for (const auto& o : qa.options) options.push_back(normalize(o));
  std::sort(options.begin(), options.end());
  std::string key = normalize(qa.question);
  key.push_back(kFieldSep);
  for (const auto& o : options) {
    key += o;
    key.push_back(kOptionSep);
  }
  return key;
}

std::vector<QAInstance> dedupe(std::span<const QAInstance> instances) {
  std::vector<QAInstance> out;
  std::unordered_set<std::string> seen;
  for (const auto& qa : instances) {
    if (seen.insert(dedupe_key(qa)).second) out.push_back(qa);
  }
  return out;
}

CoverageReport estimate_subject_coverage(std::span<const std::string> exam_titles,
                                         std::span<const std::string> subjects) {
  if (subjects.empty()) throw ConfigError("coverage: subject list is empty");
  std::vector<std::u32string> folded_subjects;
  for (const auto& s : subjects) folded_subjects.push_back(text::fold_latin(text::decode(s)));

  CoverageReport report;
  report.total_subjects = std::set<std::string>(subjects.begin(), subjects.end()).size();
  std::size_t titled = 0;
  for (const auto& title : exam_titles) {
    const std::u32string folded = text::fold_latin(text::decode(title));
    bool any = false;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (folded.find(folded_subjects[i]) != std::u32string::npos) {
        report.covered_subjects.insert(subjects[i]);
        any = true;
      }
    }
    if (any) ++titled;
  }
  report.fraction_titled =
      exam_titles.empty() ? 0.0 : static_cast<double>(titled) / static_cast<double>(exam_titles.size());
  return report;
}

StatsReport corpus_stats(std::span<const WeakMCInstance> dataset) {
  if (dataset.empty()) throw DataError("corpus_stats: empty dataset");
  std::size_t options = 0, question_chars = 0, option_chars = 0, context_chars = 0, non_extractive = 0;
  std::unordered_set<char32_t> vocab;
  const auto count = [&](std::string_view s) {
    const std::u32string chars = text::decode(s);
    vocab.insert(chars.begin(), chars.end());
    return chars.size();
  };
  for (const auto& mc : dataset) {
    options += mc.options.size();
    question_chars += count(mc.question);
    context_chars += count(mc.context);
    for (const auto& o : mc.options) option_chars += count(o);
    if (mc.context.find(mc.answer()) == std::string::npos) ++non_extractive;
  }
  const double n = static_cast<double>(dataset.size());
  StatsReport r;
  r.n_instances = dataset.size();
  r.avg_num_options = static_cast<double>(options) / n;
  r.avg_question_len_chars = static_cast<double>(question_chars) / n;
  r.avg_option_len_chars = static_cast<double>(option_chars) / static_cast<double>(options);
  r.avg_context_len_chars = static_cast<double>(context_chars) / n;
  r.char_vocab_size = vocab.size();
  r.non_extractive_pct = 100.0 * static_cast<double>(non_extractive) / n;
  return r;
}

Json to_json(const CoverageReport& report) {
  Json j;
  j["covered_subjects"] = report.covered_subjects;
  j["total_subjects"] = report.total_subjects;
  j["fraction_titled"] = report.fraction_titled;
  return j;
}

Json to_json(const StatsReport& r) {
  Json j;
  j["n_instances"] = r.n_instances;
  j["avg_num_options"] = r.avg_num_options;
  j["avg_question_len_chars"] = r.avg_question_len_chars;
  j["avg_option_len_chars"] = r.avg_option_len_chars;
  j["avg_context_len_chars"] = r.avg_context_len_chars;
  j["char_vocab_size"] = r.char_vocab_size;
  j["non_extractive_pct"] = r.non_extractive_pct;
  return j;
}

}  // namespace selfteach
