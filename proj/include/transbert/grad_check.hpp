#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transbert/params.hpp"

namespace transbert {

/// Scalar loss over the parameters currently stored in the checked sets.
/// When `accumulate_grad` is true the function must also add dLoss/dParam
/// into each slot's grad.
using LossFunction = std::function<double(bool accumulate_grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

/// Compares analytic gradients to central differences at `probe_count`
/// random coordinates. Slots are drawn uniformly (so small tensors such as
/// biases are probed as often as embedding tables), then a coordinate within
/// the slot. Relative error is |a - n| / max(|a|, |n|, 1e-8).
///
/// Throws NumericError if two identical evaluations of loss_fn differ.
GradCheckResult grad_check(const LossFunction& loss_fn, const std::vector<ParamSet<double>*>& params,
                           std::size_t probe_count, double eps = 1e-4, std::uint64_t seed = 0);

}  // namespace transbert
