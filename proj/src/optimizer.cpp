#include "selfteach/optimizer.hpp"

#include <cmath>

#include "selfteach/errors.hpp"

namespace selfteach {

AdamState AdamState::zeros_like(Task task, std::size_t vocab_size, std::size_t d_emb) {
  return {ParamGradients::zeros(task, vocab_size, d_emb), ParamGradients::zeros(task, vocab_size, d_emb), 0};
}

template <class T>
void opt_step(BasicScorerParams<T>& params, const ParamGradients& grads, AdamState& state, double lr,
              const AdamConfig& config) {
  auto p_arrays = params.arrays();
  const auto g_arrays = grads.arrays();
  auto m_arrays = state.m.arrays();
  auto v_arrays = state.v.arrays();
  if (p_arrays.size() != g_arrays.size() || p_arrays.size() != m_arrays.size()) {
    throw ContractError("opt_step: parameter, gradient and state layouts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t a = 0; a < p_arrays.size(); ++a) {
    auto p = p_arrays[a].data;
    const auto g = g_arrays[a].data;
    auto m = m_arrays[a].data;
    auto v = v_arrays[a].data;
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
      throw ContractError("opt_step: shape mismatch in " + p_arrays[a].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

template void opt_step(BasicScorerParams<float>&, const ParamGradients&, AdamState&, double, const AdamConfig&);
template void opt_step(BasicScorerParams<double>&, const ParamGradients&, AdamState&, double, const AdamConfig&);

}  // namespace selfteach
