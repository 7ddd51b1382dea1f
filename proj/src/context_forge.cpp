#include "selfteach/context_forge.hpp"

#include <algorithm>
#include <unordered_set>

#include "selfteach/parallel.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {

const char* to_string(DropReason reason) {
  switch (reason) {
    case DropReason::kNoSnippets:
      return "no_snippets";
    case DropReason::kAnswerAbsent:
      return "answer_absent";
  }
  return "unknown";
}

std::size_t count_distinct_options(std::string_view text, std::span<const std::string> options) {
  std::unordered_set<std::string_view> found;
  for (const auto& o : options) {
    if (text.find(o) != std::string_view::npos) found.insert(o);
  }
  return found.size();
}

std::vector<Snippet> filter_snippets(std::span<const Snippet> snippets, std::span<const std::string> options) {
  std::vector<Snippet> kept;
  for (const auto& s : snippets) {
    if (count_distinct_options(s.text, options) <= 1) kept.push_back(s);
  }
  return kept;
}

std::variant<WeakMCInstance, Dropped> build_weak_mc(const QAInstance& qa, std::span<const Snippet> snippets) {
  std::vector<Snippet> kept = filter_snippets(snippets, qa.options);
  std::stable_sort(kept.begin(), kept.end(), [](const Snippet& a, const Snippet& b) { return a.rank < b.rank; });
  std::string context;
  for (const auto& s : kept) {
    if (s.text.empty()) continue;
    if (!context.empty()) context += kSnippetJoiner;
    context += s.text;
  }
  if (context.empty()) return Dropped{DropReason::kNoSnippets};
  WeakMCInstance mc;
  mc.id = qa.id;
  mc.context = std::move(context);
  mc.question = qa.question;
  mc.options = qa.options;
  mc.answer_index = qa.answer_index;
  mc.provenance = Provenance::kWeak;
  mc.exam_title = qa.exam_title;
  mc.subject = qa.subject;
  return mc;
}

std::variant<ExtractiveInstance, Dropped> to_extractive(const WeakMCInstance& weak) {
  const std::u32string context = text::decode(weak.context);
  const std::u32string answer = text::decode(weak.answer());
  const auto pos = context.find(answer);
  if (answer.empty() || pos == std::u32string::npos) return Dropped{DropReason::kAnswerAbsent};
  ExtractiveInstance ex;
  ex.id = weak.id;
  ex.context = weak.context;
  ex.question = weak.question;
  ex.answer_text = weak.answer();
  ex.answer_start = static_cast<int>(pos);
  ex.answer_end = static_cast<int>(pos + answer.size());
  return ex;
}

WeakMCInstance clean_context(const WeakMCInstance& weak) {
  std::vector<std::u32string> wrong;
  for (std::size_t i = 0; i < weak.options.size(); ++i) {
    if (static_cast<int>(i) != weak.answer_index) wrong.push_back(text::decode(weak.options[i]));
  }
  std::sort(wrong.begin(), wrong.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  const std::u32string context = text::decode(weak.context);
  std::u32string out;
  std::size_t i = 0;
  while (i < context.size()) {
    const auto hit = std::find_if(wrong.begin(), wrong.end(), [&](const std::u32string& w) {
      return !w.empty() && context.compare(i, w.size(), w) == 0;
    });
    if (hit != wrong.end()) {
      i += hit->size();
    } else {
      out.push_back(context[i++]);
    }
  }
  WeakMCInstance cleaned = weak;
  cleaned.context = text::encode(out);
  return cleaned;
}

Json to_json(const ForgeSummary& s) {
  Json j;
  j["forge_format_version"] = kForgeFormatVersion;
  j["joiner"] = std::string(kSnippetJoiner);
  j["input"] = s.input;
  j["emitted_weak"] = s.emitted_weak;
  j["emitted_extractive"] = s.emitted_extractive;
  j["emitted_clean"] = s.emitted_clean;
  Json drops = Json::object();
  for (const auto& [reason, n] : s.drops) drops[reason] = n;
  j["drops"] = drops;
  return j;
}

ForgeOutput forge(std::span<const QAInstance> qa, SearchBackend& backend, SnippetCache* cache,
                  const ForgeOptions& options) {
  struct Item {
    std::variant<WeakMCInstance, Dropped> weak = Dropped{DropReason::kNoSnippets};
    std::variant<ExtractiveInstance, Dropped> extractive = Dropped{DropReason::kAnswerAbsent};
    std::optional<WeakMCInstance> cleaned;
  };
  std::vector<Item> items(qa.size());
  // Live backends are not assumed thread-safe.
  const int jobs = backend.is_live() ? 1 : options.jobs;
  parallel_for(qa.size(), jobs, [&](std::size_t i) {
    const auto snippets = search(backend, qa[i].question, options.k, cache);
    Item& item = items[i];
    item.weak = build_weak_mc(qa[i], snippets);
    if (const auto* mc = std::get_if<WeakMCInstance>(&item.weak)) {
      if (options.extractive) item.extractive = to_extractive(*mc);
      if (options.clean_context) item.cleaned = clean_context(*mc);
    }
  });

  ForgeOutput out;
  out.summary.input = qa.size();
  out.summary.drops[to_string(DropReason::kNoSnippets)] = 0;
  if (options.extractive) out.summary.drops[to_string(DropReason::kAnswerAbsent)] = 0;
  for (auto& item : items) {
    if (auto* d = std::get_if<Dropped>(&item.weak)) {
      ++out.summary.drops[to_string(d->reason)];
      continue;
    }
    out.weak.push_back(std::move(std::get<WeakMCInstance>(item.weak)));
    if (item.cleaned) out.cleaned.push_back(std::move(*item.cleaned));
    if (options.extractive) {
      if (auto* d = std::get_if<Dropped>(&item.extractive)) {
        ++out.summary.drops[to_string(d->reason)];
      } else {
        out.extractive.push_back(std::move(std::get<ExtractiveInstance>(item.extractive)));
      }
    }
  }
  out.summary.emitted_weak = out.weak.size();
  out.summary.emitted_extractive = out.extractive.size();
  out.summary.emitted_clean = out.cleaned.size();
  return out;
}

}  // namespace selfteach
