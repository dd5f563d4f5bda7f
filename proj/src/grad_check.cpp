#include "transbert/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "transbert/errors.hpp"
#include "transbert/rng.hpp"

namespace transbert {

GradCheckResult grad_check(const LossFunction& loss_fn, const std::vector<ParamSet<double>*>& params,
                           std::size_t probe_count, double eps, std::uint64_t seed) {
  if (!(eps > 0.0)) throw UsageError("grad_check: eps must be positive");

  std::vector<ParamSlot<double>*> slots;
  for (auto* set : params) {
    set->zero_grad();
    for (auto& slot : *set) {
      if (slot.value.size() > 0) slots.push_back(&slot);
    }
  }
  if (slots.empty()) throw UsageError("grad_check: no parameters to probe");

  loss_fn(true);
  std::vector<Tensor64> analytic;
  analytic.reserve(slots.size());
  for (auto* slot : slots) analytic.push_back(slot->grad);

  const double first = loss_fn(false);
  const double second = loss_fn(false);
  if (!(first == second)) {
    throw NumericError("grad_check: loss function is not deterministic across identical calls");
  }
  if (!std::isfinite(first)) throw NumericError("grad_check: loss is not finite");

  Rng rng(seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < probe_count; ++p) {
    const std::size_t s = rng.below(slots.size());
    auto& slot = *slots[s];
    const std::size_t i = rng.below(slot.value.size());
    const double saved = slot.value[i];
    slot.value[i] = saved + eps;
    const double plus = loss_fn(false);
    slot.value[i] = saved - eps;
    const double minus = loss_fn(false);
    slot.value[i] = saved;

    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[s][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    ++result.probes;
    if (result.worst_param.empty() || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = slot.name;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  for (auto* set : params) set->zero_grad();
  return result;
}

}  // namespace transbert
