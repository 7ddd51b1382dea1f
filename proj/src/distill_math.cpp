#include "selfteach/distill_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "selfteach/errors.hpp"

namespace selfteach {
namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

std::vector<double> blend(std::span<const double> h, std::span<const double> p, double lambda) {
  if (h.size() != p.size()) {
    throw ContractError("blend: label length " + std::to_string(h.size()) + " != distribution length " +
                        std::to_string(p.size()));
  }
  check_lambda(lambda);
  std::vector<double> s(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) s[k] = lambda * h[k] + (1.0 - lambda) * p[k];
  return s;
}

double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

}  // namespace

HardLabelMC HardLabelMC::one_hot(std::size_t num_options, std::size_t gold) {
  if (gold >= num_options) throw ContractError("one_hot: gold index out of range");
  HardLabelMC label{std::vector<double>(num_options, 0.0)};
  label.h[gold] = 1.0;
  return label;
}

std::size_t HardLabelMC::gold() const {
  return static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
}

std::vector<double> HardLabelSpan::start_vector() const {
  std::vector<double> v(length, 0.0);
  v.at(start) = 1.0;
  return v;
}

std::vector<double> HardLabelSpan::end_vector() const {
  std::vector<double> v(length, 0.0);
  v.at(end) = 1.0;
  return v;
}

SoftLabelMC blend_mc(const HardLabelMC& h, const OptionDistribution& p, double lambda, std::string teacher_id) {
  return {blend(h.h, p.probs, lambda), lambda, std::move(teacher_id)};
}

SoftLabelSpan blend_span(const HardLabelSpan& h, const SpanDistributions& p, double lambda,
                         std::string teacher_id) {
  return {blend(h.start_vector(), p.start_probs, lambda), blend(h.end_vector(), p.end_probs, lambda), lambda,
          std::move(teacher_id)};
}

double cross_entropy(std::span<const double> target, std::span<const double> probs) {
  if (target.size() != probs.size()) throw ContractError("cross_entropy: length mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] != 0.0) sum += target[k] * safe_log(probs[k]);
  }
  return -sum;
}

double entropy(std::span<const double> dist) { return cross_entropy(dist, dist); }

double kl_divergence(std::span<const double> s, std::span<const double> p) {
  return cross_entropy(s, p) - entropy(s);
}

double loss_hard_mc(const HardLabelMC& h, const OptionDistribution& p) { return cross_entropy(h.h, p.probs); }

double loss_soft_mc(std::span<const double> s, const OptionDistribution& p) { return cross_entropy(s, p.probs); }

double loss_hard_span(std::size_t start, std::size_t end, const SpanDistributions& p) {
  if (start >= p.start_probs.size() || end >= p.end_probs.size()) {
    throw ContractError("loss_hard_span: gold token outside the input");
  }
  return -safe_log(p.start_probs[start]) - safe_log(p.end_probs[end]);
}

double loss_soft_span(const SoftLabelSpan& s, const SpanDistributions& p) {
  return 0.5 * (cross_entropy(s.s_start, p.start_probs) + cross_entropy(s.s_end, p.end_probs));
}

void cross_entropy_logit_grad(std::span<const double> target, std::span<const double> probs, double scale,
                              std::span<double> out) {
  if (target.size() != probs.size() || out.size() != probs.size()) {
    throw ContractError("cross_entropy_logit_grad: length mismatch");
  }
  // dL/dz_j = a_j - p_j * sum_k a_k with a_k = -t_k where p_k is above the floor.
  double a_sum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] > kLogFloor) a_sum -= target[k];
  }
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double a = probs[j] > kLogFloor ? -target[j] : 0.0;
    out[j] = scale * (a - probs[j] * a_sum);
  }
}

void softmax(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) return;
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax(logits, out);
  return out;
}

bool is_distribution(std::span<const double> v, double tol) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

std::vector<double> sparsify_topk(std::span<const double> dist, std::size_t k) {
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, dist.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return dist[a] > dist[b] || (dist[a] == dist[b] && a < b); });
  std::vector<double> out(dist.size(), 0.0);
  double kept = 0.0;
  for (std::size_t i = 0; i < k; ++i) kept += dist[order[i]];
  for (std::size_t i = 0; i < k; ++i) out[order[i]] = kept > 0.0 ? dist[order[i]] / kept : 1.0 / static_cast<double>(k);
  return out;
}

}  // namespace selfteach
