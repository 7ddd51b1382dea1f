#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "selfteach/scorer.hpp"

namespace selfteach {

// Scorer and optimizer hyperparameters.
struct ScorerConfig {
  std::size_t d_emb = 64;
  std::size_t max_len = 128;
  double lr = 1e-2;
  std::size_t batch_size = 16;
};

// "desk" (default), "full_mc" and "full_extractive". The full presets use
// 512-token inputs with the learning rates and batch sizes of large-model runs.
ScorerConfig scorer_preset(std::string_view name);

// Flat key=value configuration: defaults <- config file <- command-line flags.
// Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, std::string>& defaults();

  // '#' starts a comment; blank lines are ignored.
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // True once a config file or flag has set the key.
  bool is_set(const std::string& key) const { return explicit_.count(key) != 0; }

  // Preset values overridden by any explicitly set scorer keys.
  ScorerConfig scorer() const;

  std::string dump() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace selfteach
