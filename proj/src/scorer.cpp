#include "selfteach/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {

const char* to_string(Task task) {
  return task == Task::kMultipleChoice ? "multiple_choice" : "extractive";
}

Task task_from_string(std::string_view s) {
  if (s == "multiple_choice") return Task::kMultipleChoice;
  if (s == "extractive") return Task::kExtractive;
  throw ConfigError("unknown task \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

void append(TokenSequence& seq, int id, Segment segment) {
  seq.ids.push_back(id);
  seq.segments.push_back(segment);
}

void append_text(TokenSequence& seq, std::u32string_view text, const Vocabulary& vocab, Segment segment) {
  for (char32_t c : text) append(seq, vocab.id(c), segment);
}

}  // namespace

EncodedMC encode_mc(const WeakMCInstance& instance, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  const std::u32string question = text::decode(instance.question);
  const std::u32string context = text::decode(instance.context);
  EncodedMC out;
  for (const auto& option_text : instance.options) {
    std::u32string q = question;
    std::u32string o = text::decode(option_text);
    // Question and option are kept whole unless they alone overflow the budget.
    if (q.size() + o.size() + 2 > max_len) {
      o.resize(std::min(o.size(), max_len - 2));
      q.resize(std::min(q.size(), max_len - 2 - o.size()));
    }
    const std::size_t budget = max_len - 2 - q.size() - o.size();
    TokenSequence seq;
    append_text(seq, q, vocab, Segment::kQuestion);
    append(seq, Vocabulary::kSeparator, Segment::kSeparator);
    append_text(seq, o, vocab, Segment::kOption);
    append(seq, Vocabulary::kSeparator, Segment::kSeparator);
    append_text(seq, std::u32string_view(context).substr(0, budget), vocab, Segment::kContext);
    out.options.push_back(std::move(seq));
  }
  return out;
}

EncodedSpan encode_span(std::string_view question_utf8, std::string_view context_utf8, const Vocabulary& vocab,
                        std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  std::u32string question = text::decode(question_utf8);
  const std::u32string context = text::decode(context_utf8);
  if (question.size() + 1 > max_len) question.resize(max_len - 1);
  EncodedSpan out;
  append_text(out.tokens, question, vocab, Segment::kQuestion);
  append(out.tokens, Vocabulary::kSeparator, Segment::kSeparator);
  out.context_begin = out.tokens.size();
  const std::size_t budget = max_len - out.context_begin;
  const std::size_t kept = std::min(budget, context.size());
  for (std::size_t i = 0; i < kept; ++i) {
    append(out.tokens, vocab.id(context[i]), Segment::kContext);
    out.char_offsets.push_back(static_cast<int>(i));
  }
  return out;
}

std::optional<std::pair<std::size_t, std::size_t>> answer_tokens(const EncodedSpan& encoded, int answer_start,
                                                                  int answer_end) {
  if (answer_start < 0 || answer_end <= answer_start) return std::nullopt;
  if (static_cast<std::size_t>(answer_end) > encoded.char_offsets.size()) return std::nullopt;
  return std::pair{encoded.context_begin + static_cast<std::size_t>(answer_start),
                   encoded.context_begin + static_cast<std::size_t>(answer_end) - 1};
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
BasicScorerParams<T> BasicScorerParams<T>::zeros(Task task, std::size_t vocab_size, std::size_t d_emb) {
  BasicScorerParams p;
  p.task = task;
  p.vocab_size = vocab_size;
  p.d_emb = d_emb;
  p.embedding.assign(vocab_size * d_emb, T(0));
  p.attention.assign(d_emb, T(0));
  if (task == Task::kMultipleChoice) {
    p.mc_head.assign(3 * d_emb, T(0));
  } else {
    p.span_start.assign(2 * d_emb, T(0));
    p.span_end.assign(2 * d_emb, T(0));
  }
  return p;
}

template <class T>
BasicScorerParams<T> BasicScorerParams<T>::initialize(Task task, std::size_t vocab_size, std::size_t d_emb,
                                                      std::uint64_t seed) {
  BasicScorerParams p = zeros(task, vocab_size, d_emb);
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d_emb));
  for (auto& x : p.embedding) x = static_cast<T>(emb_scale * normal(rng));
  for (auto& x : p.attention) x = static_cast<T>(0.1 * normal(rng));
  for (auto& x : p.mc_head) x = static_cast<T>(0.1 * normal(rng));
  for (auto& x : p.span_start) x = static_cast<T>(0.1 * normal(rng));
  for (auto& x : p.span_end) x = static_cast<T>(0.1 * normal(rng));
  return p;
}

namespace {

template <class Params, class Array>
std::vector<Array> collect_arrays(Params& p) {
  std::vector<Array> out;
  out.push_back({"embedding", {p.vocab_size, p.d_emb}, p.embedding});
  out.push_back({"attention", {p.d_emb}, p.attention});
  if (p.task == Task::kMultipleChoice) {
    out.push_back({"mc_head", {3, p.d_emb}, p.mc_head});
  } else {
    out.push_back({"span_start", {2, p.d_emb}, p.span_start});
    out.push_back({"span_end", {2, p.d_emb}, p.span_end});
  }
  return out;
}

}  // namespace

template <class T>
std::vector<NamedArray<T>> BasicScorerParams<T>::arrays() {
  return collect_arrays<BasicScorerParams<T>, NamedArray<T>>(*this);
}

template <class T>
std::vector<NamedArray<const T>> BasicScorerParams<T>::arrays() const {
  return collect_arrays<const BasicScorerParams<T>, NamedArray<const T>>(*this);
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

double dot(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) y[i] += alpha * x[i];
}

// Token embeddings of one sequence widened to 64-bit.
struct Embedded {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> x;
  const double* row(std::size_t i) const { return x.data() + i * d; }
};

template <class T>
Embedded embed(const BasicScorerParams<T>& params, const TokenSequence& seq) {
  Embedded e{seq.size(), params.d_emb, std::vector<double>(seq.size() * params.d_emb)};
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto id = static_cast<std::size_t>(seq.ids[i]);
    if (id >= params.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    const T* src = params.embedding.data() + id * params.d_emb;
    std::copy(src, src + params.d_emb, e.x.begin() + static_cast<std::ptrdiff_t>(i * params.d_emb));
  }
  return e;
}

std::vector<double> widen_vec(const auto& v) { return std::vector<double>(v.begin(), v.end()); }

std::vector<std::size_t> positions(const TokenSequence& seq, Segment segment) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.segments[i] == segment) out.push_back(i);
  }
  return out;
}

// Softmax-weighted average of rows selected by idx; weights from sharpness * query . row.
struct Attended {
  std::vector<std::size_t> idx;
  std::vector<double> weights;
  std::vector<double> value;  // d; zero when idx is empty
  double sharpness = 1.0;     // multiplies every logit
};

Attended attend(const Embedded& e, std::vector<std::size_t> idx, const double* query, double sharpness = 1.0) {
  Attended a{std::move(idx), {}, std::vector<double>(e.d, 0.0), sharpness};
  std::vector<double> logits(a.idx.size());
  for (std::size_t j = 0; j < a.idx.size(); ++j) logits[j] = sharpness * dot(query, e.row(a.idx[j]), e.d);
  a.weights = softmax(logits);
  for (std::size_t j = 0; j < a.idx.size(); ++j) axpy(a.weights[j], e.row(a.idx[j]), a.value.data(), e.d);
  return a;
}

// Backpropagates d(value) into the rows (dx) and the query (dquery).
void attend_backward(const Attended& a, const Embedded& e, const double* query, const double* dvalue, double* dx,
                     double* dquery) {
  if (a.idx.empty()) return;
  const std::size_t d = e.d;
  std::vector<double> dw(a.idx.size());
  double mean = 0.0;
  for (std::size_t j = 0; j < a.idx.size(); ++j) {
    dw[j] = dot(dvalue, e.row(a.idx[j]), d);
    mean += a.weights[j] * dw[j];
  }
  for (std::size_t j = 0; j < a.idx.size(); ++j) {
    const double dlogit = a.sharpness * a.weights[j] * (dw[j] - mean);
    double* dxj = dx + a.idx[j] * d;
    axpy(a.weights[j], dvalue, dxj, d);
    axpy(dlogit, query, dxj, d);
    axpy(dlogit, e.row(a.idx[j]), dquery, d);
  }
}

// Cached activations of one option sequence.
struct OptionPass {
  Embedded e;
  Attended question;
  Attended option;
  Attended context;
  double score = 0.0;
};

template <class T>
OptionPass option_forward(const BasicScorerParams<T>& params, const std::vector<double>& attention,
                          const std::vector<double>& head, const TokenSequence& seq) {
  const std::size_t d = params.d_emb;
  OptionPass pass;
  pass.e = embed(params, seq);
  pass.question = attend(pass.e, positions(seq, Segment::kQuestion), attention.data());
  pass.option = attend(pass.e, positions(seq, Segment::kOption), attention.data());
  pass.context = attend(pass.e, positions(seq, Segment::kContext), pass.option.value.data(), kContextSharpness);
  const double* q = pass.question.value.data();
  const double* o = pass.option.value.data();
  const double* c = pass.context.value.data();
  const double* h1 = head.data();
  const double* h2 = h1 + d;
  const double* h3 = h2 + d;
  double score = 0.0;
  for (std::size_t i = 0; i < d; ++i) score += h1[i] * q[i] * o[i] + h2[i] * o[i] * c[i] + h3[i] * o[i];
  pass.score = score;
  return pass;
}

void scatter_embedding(const TokenSequence& seq, const std::vector<double>& dx, std::size_t d,
                       std::vector<double>& grad) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    axpy(1.0, dx.data() + i * d, grad.data() + static_cast<std::size_t>(seq.ids[i]) * d, d);
  }
}

void option_backward(const OptionPass& pass, const TokenSequence& seq, const std::vector<double>& attention,
                     const std::vector<double>& head, double dscore, ParamGradients& g) {
  const std::size_t d = pass.e.d;
  const double* q = pass.question.value.data();
  const double* o = pass.option.value.data();
  const double* c = pass.context.value.data();
  const double* h1 = head.data();
  const double* h2 = h1 + d;
  const double* h3 = h2 + d;
  double* gh1 = g.mc_head.data();
  double* gh2 = gh1 + d;
  double* gh3 = gh2 + d;
  std::vector<double> dq(d), dopt(d), dc(d);
  for (std::size_t i = 0; i < d; ++i) {
    gh1[i] += dscore * q[i] * o[i];
    gh2[i] += dscore * o[i] * c[i];
    gh3[i] += dscore * o[i];
    dq[i] = dscore * h1[i] * o[i];
    dopt[i] = dscore * (h1[i] * q[i] + h2[i] * c[i] + h3[i]);
    dc[i] = dscore * h2[i] * o[i];
  }
  std::vector<double> dx(pass.e.n * d, 0.0);
  attend_backward(pass.context, pass.e, o, dc.data(), dx.data(), dopt.data());
  if (!pass.option.idx.empty()) {
    attend_backward(pass.option, pass.e, attention.data(), dopt.data(), dx.data(), g.attention.data());
  }
  attend_backward(pass.question, pass.e, attention.data(), dq.data(), dx.data(), g.attention.data());
  scatter_embedding(seq, dx, d, g.embedding);
}

template <class T>
void check_task(const BasicScorerParams<T>& params, Task task) {
  if (params.task != task) {
    throw ContractError(std::string("scorer has a ") + to_string(params.task) + " head, expected " +
                        to_string(task));
  }
}

struct SpanPass {
  Embedded e;
  Attended question;
  std::vector<double> start_logits;
  std::vector<double> end_logits;
};

template <class T>
SpanPass span_forward_pass(const BasicScorerParams<T>& params, const std::vector<double>& attention,
                           const std::vector<double>& start_w, const std::vector<double>& end_w,
                           const TokenSequence& seq) {
  const std::size_t d = params.d_emb;
  SpanPass pass;
  pass.e = embed(params, seq);
  pass.question = attend(pass.e, positions(seq, Segment::kQuestion), attention.data());
  const double* q = pass.question.value.data();
  pass.start_logits.resize(seq.size());
  pass.end_logits.resize(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const double* x = pass.e.row(t);
    double s = 0.0, e = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      s += start_w[i] * x[i] * q[i] + start_w[d + i] * x[i];
      e += end_w[i] * x[i] * q[i] + end_w[d + i] * x[i];
    }
    pass.start_logits[t] = s;
    pass.end_logits[t] = e;
  }
  return pass;
}

}  // namespace

template <class T>
OptionDistribution forward_mc(const BasicScorerParams<T>& params, const EncodedMC& encoded) {
  check_task(params, Task::kMultipleChoice);
  const auto attention = widen_vec(params.attention);
  const auto head = widen_vec(params.mc_head);
  std::vector<double> scores;
  for (const auto& seq : encoded.options) scores.push_back(option_forward(params, attention, head, seq).score);
  return {softmax(scores)};
}

template <class T>
SpanDistributions forward_span(const BasicScorerParams<T>& params, const EncodedSpan& encoded) {
  check_task(params, Task::kExtractive);
  const auto pass = span_forward_pass(params, widen_vec(params.attention), widen_vec(params.span_start),
                                      widen_vec(params.span_end), encoded.tokens);
  return {softmax(pass.start_logits), softmax(pass.end_logits)};
}

double mc_loss(const McExample& ex, const OptionDistribution& p, std::span<double> dlogits) {
  if (ex.target.size() != p.probs.size()) {
    throw ContractError("instance " + ex.id + ": label length does not match option count");
  }
  cross_entropy_logit_grad(ex.target, p.probs, 1.0, dlogits);
  if (ex.soft) return loss_soft_mc(ex.target, p);
  return loss_hard_mc(HardLabelMC{ex.target}, p);
}

double span_loss(const SpanExample& ex, const SpanDistributions& p, std::span<double> dstart,
                 std::span<double> dend) {
  const std::size_t n = p.start_probs.size();
  if (!ex.soft) {
    HardLabelSpan h{n, ex.gold_start, ex.gold_end};
    if (ex.gold_start >= n || ex.gold_end >= n) {
      throw ContractError("instance " + ex.id + ": gold token outside the input");
    }
    cross_entropy_logit_grad(h.start_vector(), p.start_probs, 1.0, dstart);
    cross_entropy_logit_grad(h.end_vector(), p.end_probs, 1.0, dend);
    return loss_hard_span(ex.gold_start, ex.gold_end, p);
  }
  if (ex.target_start.size() != n || ex.target_end.size() != n) {
    throw ContractError("instance " + ex.id + ": soft label length does not match the input");
  }
  cross_entropy_logit_grad(ex.target_start, p.start_probs, 0.5, dstart);
  cross_entropy_logit_grad(ex.target_end, p.end_probs, 0.5, dend);
  return loss_soft_span({ex.target_start, ex.target_end, 0.0, {}}, p);
}

template <class T>
GradientResult gradients(const BasicScorerParams<T>& params, std::span<const McExample> batch,
                         const McLossFn& loss) {
  check_task(params, Task::kMultipleChoice);
  GradientResult result{ParamGradients::zeros(params.task, params.vocab_size, params.d_emb), 0.0};
  result.grads.seed = params.seed;
  if (batch.empty()) return result;
  const auto attention = widen_vec(params.attention);
  const auto head = widen_vec(params.mc_head);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    std::vector<OptionPass> passes;
    std::vector<double> scores;
    for (const auto& seq : ex.input.options) {
      passes.push_back(option_forward(params, attention, head, seq));
      scores.push_back(passes.back().score);
    }
    const OptionDistribution p{softmax(scores)};
    std::vector<double> dlogits(scores.size(), 0.0);
    const double value = loss(ex, p, dlogits);
    if (!std::isfinite(value)) throw NumericalError(ex.id, "non-finite loss");
    result.loss += value * scale;
    for (std::size_t k = 0; k < passes.size(); ++k) {
      if (dlogits[k] != 0.0) {
        option_backward(passes[k], ex.input.options[k], attention, head, dlogits[k] * scale, result.grads);
      }
    }
  }
  return result;
}

template <class T>
GradientResult gradients(const BasicScorerParams<T>& params, std::span<const SpanExample> batch,
                         const SpanLossFn& loss) {
  check_task(params, Task::kExtractive);
  GradientResult result{ParamGradients::zeros(params.task, params.vocab_size, params.d_emb), 0.0};
  result.grads.seed = params.seed;
  if (batch.empty()) return result;
  const std::size_t d = params.d_emb;
  const auto attention = widen_vec(params.attention);
  const auto start_w = widen_vec(params.span_start);
  const auto end_w = widen_vec(params.span_end);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto& seq = ex.input.tokens;
    const SpanPass pass = span_forward_pass(params, attention, start_w, end_w, seq);
    const SpanDistributions p{softmax(pass.start_logits), softmax(pass.end_logits)};
    std::vector<double> dstart(seq.size(), 0.0), dend(seq.size(), 0.0);
    const double value = loss(ex, p, dstart, dend);
    if (!std::isfinite(value)) throw NumericalError(ex.id, "non-finite loss");
    result.loss += value * scale;

    const double* q = pass.question.value.data();
    std::vector<double> dq(d, 0.0);
    std::vector<double> dx(seq.size() * d, 0.0);
    double* gs = result.grads.span_start.data();
    double* ge = result.grads.span_end.data();
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const double a = dstart[t] * scale;
      const double b = dend[t] * scale;
      if (a == 0.0 && b == 0.0) continue;
      const double* x = pass.e.row(t);
      double* dxt = dx.data() + t * d;
      for (std::size_t i = 0; i < d; ++i) {
        gs[i] += a * x[i] * q[i];
        gs[d + i] += a * x[i];
        ge[i] += b * x[i] * q[i];
        ge[d + i] += b * x[i];
        dxt[i] += a * (start_w[i] * q[i] + start_w[d + i]) + b * (end_w[i] * q[i] + end_w[d + i]);
        dq[i] += a * start_w[i] * x[i] + b * end_w[i] * x[i];
      }
    }
    attend_backward(pass.question, pass.e, attention.data(), dq.data(), dx.data(), result.grads.attention.data());
    scatter_embedding(seq, dx, d, result.grads.embedding);
  }
  return result;
}

std::pair<int, int> decode_span(const EncodedSpan& encoded, const SpanDistributions& p, std::size_t max_tokens) {
  const std::size_t begin = encoded.context_begin;
  const std::size_t n = encoded.tokens.size();
  if (begin >= n) return {0, 0};
  double best = -1.0;
  std::pair<std::size_t, std::size_t> arg{begin, begin};
  for (std::size_t s = begin; s < n; ++s) {
    const std::size_t last = std::min(n, s + max_tokens);
    for (std::size_t e = s; e < last; ++e) {
      const double score = p.start_probs[s] * p.end_probs[e];
      if (score > best) {
        best = score;
        arg = {s, e};
      }
    }
  }
  return {encoded.char_offsets[arg.first - begin], encoded.char_offsets[arg.second - begin] + 1};
}

template struct BasicScorerParams<float>;
template struct BasicScorerParams<double>;
template OptionDistribution forward_mc(const BasicScorerParams<float>&, const EncodedMC&);
template OptionDistribution forward_mc(const BasicScorerParams<double>&, const EncodedMC&);
template SpanDistributions forward_span(const BasicScorerParams<float>&, const EncodedSpan&);
template SpanDistributions forward_span(const BasicScorerParams<double>&, const EncodedSpan&);
template GradientResult gradients(const BasicScorerParams<float>&, std::span<const McExample>, const McLossFn&);
template GradientResult gradients(const BasicScorerParams<double>&, std::span<const McExample>, const McLossFn&);
template GradientResult gradients(const BasicScorerParams<float>&, std::span<const SpanExample>, const SpanLossFn&);
template GradientResult gradients(const BasicScorerParams<double>&, std::span<const SpanExample>,
                                  const SpanLossFn&);

}  // namespace selfteach
