#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selfteach/distill_math.hpp"
#include "selfteach/records.hpp"
#include "selfteach/vocabulary.hpp"

namespace selfteach {

enum class Task { kMultipleChoice, kExtractive };
const char* to_string(Task task);
Task task_from_string(std::string_view s);

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

enum class Segment : std::uint8_t { kQuestion, kSeparator, kOption, kContext };

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Segment> segments;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// One sequence per option: [question] SEP [option] SEP [context].
struct EncodedMC {
  std::vector<TokenSequence> options;
};

// Single sequence [question] SEP [context] plus the character offset (within the
// context) of every context token.
struct EncodedSpan {
  TokenSequence tokens;
  std::size_t context_begin = 0;
  std::vector<int> char_offsets;
};

// The context is truncated from its tail so every sequence fits max_len.
EncodedMC encode_mc(const WeakMCInstance& instance, const Vocabulary& vocab, std::size_t max_len);
EncodedSpan encode_span(std::string_view question, std::string_view context, const Vocabulary& vocab,
                        std::size_t max_len);

// Token positions (start, end inclusive) of the character span [answer_start,
// answer_end), or nullopt when truncation removed part of it.
std::optional<std::pair<std::size_t, std::size_t>> answer_tokens(const EncodedSpan& encoded, int answer_start,
                                                                  int answer_end);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class T>
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<T> data;
};

// Context attention logits are scaled by this factor so a context row that
// repeats the option dominates the pooled context vector.
inline constexpr double kContextSharpness = 8.0;

// Embedding -> attention pooling -> linear heads.
//   embedding   [vocab, d]
//   attention   [d]         pooling query shared by question and option
//   mc_head     [3, d]      weights on q*o, o*c and o (multiple choice only)
//   span_start  [2, d]      weights on e*q and e (extractive only)
//   span_end    [2, d]
template <class T>
struct BasicScorerParams {
  Task task = Task::kMultipleChoice;
  std::size_t vocab_size = 0;
  std::size_t d_emb = 0;
  std::uint64_t seed = 0;
  std::vector<T> embedding;
  std::vector<T> attention;
  std::vector<T> mc_head;
  std::vector<T> span_start;
  std::vector<T> span_end;

  // All-zero arrays with the shapes implied by (task, vocab_size, d_emb).
  static BasicScorerParams zeros(Task task, std::size_t vocab_size, std::size_t d_emb);
  // Seeded initialization; a pure function of its arguments.
  static BasicScorerParams initialize(Task task, std::size_t vocab_size, std::size_t d_emb, std::uint64_t seed);

  std::vector<NamedArray<T>> arrays();
  std::vector<NamedArray<const T>> arrays() const;

  template <class U>
  BasicScorerParams<U> cast() const;

  bool operator==(const BasicScorerParams&) const = default;
};

using ScorerParams = BasicScorerParams<float>;
using ParamGradients = BasicScorerParams<double>;

template <class T>
template <class U>
BasicScorerParams<U> BasicScorerParams<T>::cast() const {
  const auto convert = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
  return {task, vocab_size, d_emb, seed, convert(embedding), convert(attention),
          convert(mc_head), convert(span_start), convert(span_end)};
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <class T>
OptionDistribution forward_mc(const BasicScorerParams<T>& params, const EncodedMC& encoded);

template <class T>
SpanDistributions forward_span(const BasicScorerParams<T>& params, const EncodedSpan& encoded);

// Training example for the option head. target is the one-hot hard label (L1)
// or the blended soft label (L2/L3).
struct McExample {
  std::string id;
  EncodedMC input;
  std::vector<double> target;
  bool soft = false;
};

// Training example for the span head. Hard examples use gold_start/gold_end;
// soft examples use target_start/target_end.
struct SpanExample {
  std::string id;
  EncodedSpan input;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
  std::vector<double> target_start;
  std::vector<double> target_end;
  bool soft = false;
};

// A loss returns its value and writes dLoss/dlogits.
using McLossFn = std::function<double(const McExample&, const OptionDistribution&, std::span<double> dlogits)>;
using SpanLossFn = std::function<double(const SpanExample&, const SpanDistributions&, std::span<double> dstart,
                                        std::span<double> dend)>;

// L1 for hard examples, L2/L3 for soft ones.
double mc_loss(const McExample& ex, const OptionDistribution& p, std::span<double> dlogits);
double span_loss(const SpanExample& ex, const SpanDistributions& p, std::span<double> dstart,
                 std::span<double> dend);

struct GradientResult {
  ParamGradients grads;
  double loss = 0.0;  // mean over the batch
};

// Exact gradients of the mean batch loss. A non-finite loss raises
// NumericalError naming the instance.
template <class T>
GradientResult gradients(const BasicScorerParams<T>& params, std::span<const McExample> batch,
                         const McLossFn& loss = mc_loss);
template <class T>
GradientResult gradients(const BasicScorerParams<T>& params, std::span<const SpanExample> batch,
                         const SpanLossFn& loss = span_loss);

// Best (start <= end) span restricted to context tokens, at most max_tokens long.
// Returns character offsets [start, end) into the context.
std::pair<int, int> decode_span(const EncodedSpan& encoded, const SpanDistributions& p,
                                std::size_t max_tokens = 30);

}  // namespace selfteach
