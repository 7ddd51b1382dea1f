#include "selfteach/config.hpp"

#include <fstream>
#include <sstream>

#include "selfteach/errors.hpp"

namespace selfteach {

ScorerConfig scorer_preset(std::string_view name) {
  if (name == "desk") return {};
  if (name == "full_mc") return {64, 512, 2e-5, 24};
  if (name == "full_extractive") return {64, 512, 3e-5, 32};
  throw ConfigError("unknown scorer preset \"" + std::string(name) + "\"");
}

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      {"preset", "desk"},
      {"d_emb", "64"},
      {"max_len", "128"},
      {"lr", "0.01"},
      {"batch_size", "16"},
      {"seed", "1"},
      {"lambda", "0.5"},
      {"epochs_teacher", "1"},
      {"epochs_student", "1"},
      {"epochs_expert", "0"},  // 0 = task default (8 multiple choice, 2 extractive)
      {"jobs", "1"},
      {"backend", "local"},
      {"k", "10"},
      {"corpus", ""},
      {"cache_dir", ""},
      {"endpoint", ""},
      {"results_per_page", "10"},
      {"result_path", "/results"},
      {"text_field", "snippet"},
      {"id_field", "url"},
      {"topk_soft", "0"},
      {"clean_context", "false"},
      {"extractive", "false"},
  };
  return kDefaults;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  it->second = value;
  explicit_[key] = true;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  try {
    std::size_t used = 0;
    const double v = std::stod(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + key + " expects a number, got \"" + get(key) + "\"");
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("config key " + key + " expects an integer, got \"" + get(key) + "\"");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + " expects a boolean, got \"" + v + "\"");
}

ScorerConfig RunConfig::scorer() const {
  ScorerConfig c = scorer_preset(get("preset"));
  if (explicit_.count("d_emb")) c.d_emb = static_cast<std::size_t>(get_int("d_emb"));
  if (explicit_.count("max_len")) c.max_len = static_cast<std::size_t>(get_int("max_len"));
  if (explicit_.count("lr")) c.lr = get_double("lr");
  if (explicit_.count("batch_size")) c.batch_size = static_cast<std::size_t>(get_int("batch_size"));
  return c;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace selfteach
