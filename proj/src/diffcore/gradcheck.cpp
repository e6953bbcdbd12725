#include "expres/gradcheck.hpp"

#include <cmath>

#include "expres/errors.hpp"

namespace expres {
namespace {

double evaluate_loss(const ParamStore& store, const LossFn& loss) {
  Graph g(store, /*grad_enabled=*/false);
  const Var v = loss(g);
  if (g.value(v).size() != 1) throw ContractError("finite_diff_check: loss is not scalar");
  return g.value(v)[0];
}

}  // namespace

FiniteDiffReport finite_diff_report(ParamStore& store, const LossFn& loss, const std::string& name, float epsilon) {
  if (!(epsilon > 0.0f)) throw ContractError("finite_diff_check: epsilon must be positive");
  if (!store.contains(name)) throw ContractError("finite_diff_check: unknown parameter '" + name + "'");
  if (!store.trainable(name)) {
    throw ContractError("finite_diff_check: '" + name + "' is frozen and cannot be differentiated");
  }

  Tensor analytic;
  {
    Graph g(store);
    const Var v = loss(g);
    analytic = g.gradient(v, {name}).at(name);
  }

  FiniteDiffReport report;
  report.coordinates = analytic.size();
  Tensor& theta = store.mutable_value(name);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const float original = theta[i];
    const float plus = original + epsilon;
    const float minus = original - epsilon;
    theta[i] = plus;
    const double lp = evaluate_loss(store, loss);
    theta[i] = minus;
    const double lm = evaluate_loss(store, loss);
    theta[i] = original;

    const double numeric = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double a = analytic[i];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > report.max_rel_error || i == 0) {
      report.max_rel_error = static_cast<float>(rel);
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace expres
