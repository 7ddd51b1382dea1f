#include "selfteach/records.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {
namespace {

void check_options(const std::vector<std::string>& options, int answer_index) {
  if (options.size() < 2) throw ValidationError("options", "at least 2 options required");
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options[i].empty()) {
      throw ValidationError("options", "option " + std::to_string(i) + " is empty");
    }
  }
  if (answer_index < 0 || static_cast<std::size_t>(answer_index) >= options.size()) {
    throw ValidationError("answer_index", "answer_index out of range");
  }
}

template <class T>
T required(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(key, "missing field");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(key, "wrong type");
  }
}

std::optional<std::string> optional_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(key, "wrong type");
  return it->get<std::string>();
}

}  // namespace

void validate(const QAInstance& qa) {
  if (qa.id.empty()) throw ValidationError("id", "empty id");
  check_options(qa.options, qa.answer_index);
}

void validate(const WeakMCInstance& mc) {
  if (mc.id.empty()) throw ValidationError("id", "empty id");
  check_options(mc.options, mc.answer_index);
  if (mc.context.empty()) throw ValidationError("context", "empty context");
}

void validate(const ExtractiveInstance& ex) {
  if (ex.id.empty()) throw ValidationError("id", "empty id");
  const std::u32string context = text::decode(ex.context);
  if (ex.answer_start < 0 || ex.answer_start >= ex.answer_end ||
      static_cast<std::size_t>(ex.answer_end) > context.size()) {
    throw ValidationError("answer_start", "answer offsets out of range");
  }
  const auto span = context.substr(static_cast<std::size_t>(ex.answer_start),
                                   static_cast<std::size_t>(ex.answer_end - ex.answer_start));
  if (text::encode(span) != ex.answer_text) {
    throw ValidationError("answer_text", "context[answer_start:answer_end] != answer_text");
  }
}

const char* to_string(Provenance p) { return p == Provenance::kWeak ? "weak" : "clean"; }

Json to_json(const QAInstance& qa) {
  Json j;
  j["id"] = qa.id;
  j["question"] = qa.question;
  j["options"] = qa.options;
  j["answer_index"] = qa.answer_index;
  if (qa.exam_title) j["exam_title"] = *qa.exam_title;
  if (qa.subject) j["subject"] = *qa.subject;
  return j;
}

Json to_json(const WeakMCInstance& mc) {
  Json j;
  j["id"] = mc.id;
  j["question"] = mc.question;
  j["options"] = mc.options;
  j["answer_index"] = mc.answer_index;
  if (mc.exam_title) j["exam_title"] = *mc.exam_title;
  if (mc.subject) j["subject"] = *mc.subject;
  j["context"] = mc.context;
  j["provenance"] = to_string(mc.provenance);
  return j;
}

Json to_json(const ExtractiveInstance& ex) {
  Json j;
  j["id"] = ex.id;
  j["context"] = ex.context;
  j["question"] = ex.question;
  j["answer_text"] = ex.answer_text;
  j["answer_start"] = ex.answer_start;
  j["answer_end"] = ex.answer_end;
  return j;
}

QAInstance qa_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("record", "not a JSON object");
  QAInstance qa;
  qa.id = required<std::string>(j, "id");
  qa.question = required<std::string>(j, "question");
  qa.options = required<std::vector<std::string>>(j, "options");
  qa.answer_index = required<int>(j, "answer_index");
  qa.exam_title = optional_string(j, "exam_title");
  qa.subject = optional_string(j, "subject");
  validate(qa);
  return qa;
}

WeakMCInstance weak_mc_from_json(const Json& j) {
  const QAInstance qa = qa_from_json(j);
  WeakMCInstance mc;
  mc.id = qa.id;
  mc.question = qa.question;
  mc.options = qa.options;
  mc.answer_index = qa.answer_index;
  mc.exam_title = qa.exam_title;
  mc.subject = qa.subject;
  mc.context = required<std::string>(j, "context");
  const auto provenance = optional_string(j, "provenance").value_or("weak");
  if (provenance == "weak") {
    mc.provenance = Provenance::kWeak;
  } else if (provenance == "clean") {
    mc.provenance = Provenance::kClean;
  } else {
    throw ValidationError("provenance", "expected \"weak\" or \"clean\"");
  }
  validate(mc);
  return mc;
}

ExtractiveInstance extractive_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("record", "not a JSON object");
  ExtractiveInstance ex;
  ex.id = required<std::string>(j, "id");
  ex.context = required<std::string>(j, "context");
  ex.question = required<std::string>(j, "question");
  ex.answer_text = required<std::string>(j, "answer_text");
  ex.answer_start = required<int>(j, "answer_start");
  ex.answer_end = required<int>(j, "answer_end");
  validate(ex);
  return ex;
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string(), lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      fn(j, lineno);
    } catch (const ValidationError& e) {
      if (e.line() != 0) throw;
      throw ValidationError(path.string(), lineno, e.field(), e.detail());
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string bytes;
  for (const auto& row : rows) {
    bytes += row.dump();
    bytes += '\n';
  }
  write_file(path, bytes);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<WeakMCInstance> read_weak_mc(const std::filesystem::path& path) {
  std::vector<WeakMCInstance> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    out.push_back(weak_mc_from_json(j));
    if (!seen.insert(out.back().id).second) throw ValidationError("id", "duplicate id " + out.back().id);
  });
  return out;
}

std::vector<ExtractiveInstance> read_extractive(const std::filesystem::path& path) {
  std::vector<ExtractiveInstance> out;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    out.push_back(extractive_from_json(j));
    if (!seen.insert(out.back().id).second) throw ValidationError("id", "duplicate id " + out.back().id);
  });
  return out;
}

}  // namespace selfteach
