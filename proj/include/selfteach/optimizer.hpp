#pragma once

#include <cstdint>

#include "selfteach/scorer.hpp"

namespace selfteach {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates, shaped like the parameters.
struct AdamState {
  ParamGradients m;
  ParamGradients v;
  std::uint64_t step = 0;

  static AdamState zeros_like(Task task, std::size_t vocab_size, std::size_t d_emb);
};

// One bias-corrected adaptive-moment update, in place.
template <class T>
void opt_step(BasicScorerParams<T>& params, const ParamGradients& grads, AdamState& state, double lr,
              const AdamConfig& config = {});

}  // namespace selfteach
