#include "selfteach/metrics.hpp"

#include <cmath>
#include <unordered_map>

#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {

Json to_json(const EvalReport& r) {
  Json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["n"] = r.n;
  j["seed"] = r.seed;
  j["split"] = r.split;
  return j;
}

double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) throw ContractError("accuracy: prediction and gold lengths differ");
  if (gold.empty()) throw DataError("accuracy: no instances");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predictions[i] == gold[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::u32string normalize_answer(std::string_view s) {
  std::u32string out;
  for (char32_t c : text::decode(s)) {
    if (!text::is_whitespace(c) && !text::is_punctuation(c)) out.push_back(c);
  }
  return out;
}

int exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

double char_f1(std::string_view pred, std::string_view gold) {
  const std::u32string p = normalize_answer(pred);
  const std::u32string g = normalize_answer(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<char32_t, long> counts;
  for (char32_t c : g) ++counts[c];
  long overlap = 0;
  for (char32_t c : p) {
    auto it = counts.find(c);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

SeedAggregate aggregate_seeds(std::span<const double> values) {
  if (values.empty()) throw DataError("aggregate_seeds: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

double round1(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace selfteach
