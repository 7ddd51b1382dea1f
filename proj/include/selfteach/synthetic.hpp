#pragma once

#include <cstdint>
#include <vector>

#include "selfteach/records.hpp"
#include "selfteach/retrieval.hpp"

namespace selfteach::synthetic {

// Generator for desk-scale reading-comprehension corpora.
//
// Every entity (an option string) is built from characters that belong to one
// latent category; each question names a category through a marker character.
// The correct option is the one whose category matches the question, and it is
// mentioned in the context together with some distractor options. Solving the
// task well therefore needs per-character knowledge that only grows with data,
// which is what the weakly-labeled set supplies.
struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t n_train = 500;
  std::size_t n_test = 500;
  std::size_t n_weak = 5000;
  std::size_t n_categories = 8;
  std::size_t chars_per_category = 1000;
  std::size_t n_options = 4;
  std::size_t entity_len = 2;
  std::size_t n_filler = 120;
  std::size_t context_filler = 60;
  // Clean (target) contexts always mention the answer.
  double clean_distractor_rate = 0.5;
  // Weak contexts: the answer may be missing and distractors are more frequent.
  double weak_answer_rate = 0.8;
  double weak_distractor_rate = 0.6;
};

struct Corpus {
  std::vector<WeakMCInstance> train;  // target V, provenance clean
  std::vector<WeakMCInstance> test;   // held-out target split
  std::vector<WeakMCInstance> weak;   // W, provenance weak
};

Corpus generate(const CorpusConfig& config);

// Converts each instance to its first-mention extractive form, skipping those
// whose answer is absent from the context.
std::vector<ExtractiveInstance> to_extractive(const std::vector<WeakMCInstance>& instances);

// QA records plus a document collection for exercising the forge.
struct ForgeFixture {
  std::vector<QAInstance> qa;
  std::vector<Document> documents;
};

ForgeFixture forge_fixture(std::size_t n_instances, std::uint64_t seed);

}  // namespace selfteach::synthetic
