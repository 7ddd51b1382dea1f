#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace selfteach {

// Probabilities are floored at this value inside every log.
inline constexpr double kLogFloor = 1e-12;
inline constexpr double kNormTolerance = 1e-6;

// p(k|t) over the m_t options of one instance.
struct OptionDistribution {
  std::vector<double> probs;
};

// Start/end distributions over the l_t tokens of one (question, context) input.
struct SpanDistributions {
  std::vector<double> start_probs;
  std::vector<double> end_probs;
};

struct HardLabelMC {
  std::vector<double> h;

  static HardLabelMC one_hot(std::size_t num_options, std::size_t gold);
  std::size_t gold() const;
};

struct SoftLabelMC {
  std::vector<double> s;
  double lambda_used = 0.0;
  std::string teacher_id;
};

// Gold start/end token positions within an input of length l_t.
struct HardLabelSpan {
  std::size_t length = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  std::vector<double> start_vector() const;
  std::vector<double> end_vector() const;
};

struct SoftLabelSpan {
  std::vector<double> s_start;
  std::vector<double> s_end;
  double lambda_used = 0.0;
  std::string teacher_id;
};

// s_k = lambda * h_k + (1 - lambda) * p_k.
SoftLabelMC blend_mc(const HardLabelMC& h, const OptionDistribution& p, double lambda,
                     std::string teacher_id = {});
SoftLabelSpan blend_span(const HardLabelSpan& h, const SpanDistributions& p, double lambda,
                         std::string teacher_id = {});

// L1 (multiple choice): -sum_k h_k log p_k.
double loss_hard_mc(const HardLabelMC& h, const OptionDistribution& p);
// L2 / L3 (multiple choice): -sum_k s_k log p_k. No 1/2 factor.
double loss_soft_mc(std::span<const double> s, const OptionDistribution& p);
// L1 (span): -log p_start[start] - log p_end[end].
double loss_hard_span(std::size_t start, std::size_t end, const SpanDistributions& p);
// L2 / L3 (span): mean of the start and end soft cross-entropies.
double loss_soft_span(const SoftLabelSpan& s, const SpanDistributions& p);

double cross_entropy(std::span<const double> target, std::span<const double> probs);
double entropy(std::span<const double> dist);
// KL(s || p) reported alongside the soft cross-entropy.
double kl_divergence(std::span<const double> s, std::span<const double> p);

// Gradient of scale * cross_entropy(target, softmax(z)) with respect to z, given
// p = softmax(z). Exact under the log floor: clamped terms contribute nothing.
void cross_entropy_logit_grad(std::span<const double> target, std::span<const double> probs, double scale,
                              std::span<double> out);

// Numerically stable softmax in 64-bit.
void softmax(std::span<const double> logits, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

bool is_distribution(std::span<const double> v, double tol = kNormTolerance);

// Keeps the k largest entries, renormalized; the rest become zero.
std::vector<double> sparsify_topk(std::span<const double> dist, std::size_t k);

}  // namespace selfteach
