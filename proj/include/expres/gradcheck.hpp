#pragma once

#include <functional>
#include <string>

#include "expres/graph.hpp"

namespace expres {

// Builds the scalar loss on a fresh graph bound to the store.
using LossFn = std::function<Var(Graph&)>;

struct FiniteDiffReport {
  float max_rel_error = 0.0f;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Central differences (L(θ+ε) - L(θ-ε)) / (θ₊ - θ₋) for every coordinate of the
// named trainable parameter, compared with the reverse-mode gradient. The
// divisor is the step actually taken after rounding θ±ε to f32. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator. The store is restored
// before returning.
FiniteDiffReport finite_diff_report(ParamStore& store, const LossFn& loss, const std::string& name, float epsilon);

inline float finite_diff_check(ParamStore& store, const LossFn& loss, const std::string& name, float epsilon) {
  return finite_diff_report(store, loss, name, epsilon).max_rel_error;
}

}  // namespace expres
