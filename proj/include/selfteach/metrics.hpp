#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfteach/records.hpp"

namespace selfteach {

struct EvalReport {
  std::string metric;
  double value = 0.0;  // percentage
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string split;
};
Json to_json(const EvalReport& report);

// 100 * correct / n. Empty or mismatched inputs throw.
double accuracy(std::span<const int> predictions, std::span<const int> gold);

// Whitespace and Unicode punctuation are removed before comparing.
std::u32string normalize_answer(std::string_view s);

int exact_match(std::string_view pred, std::string_view gold);

// Character-multiset F1 in [0, 1] after normalization.
double char_f1(std::string_view pred, std::string_view gold);

struct SeedAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population
};
SeedAggregate aggregate_seeds(std::span<const double> values);

// One decimal, as reported in result tables.
double round1(double x);

}  // namespace selfteach
