#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "transbert/params.hpp"

namespace transbert {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled decay, applied only to slots with apply_weight_decay set.
  double weight_decay = 0.0;
};

/// Bias-corrected Adam update on every slot of every set, then zeroes the
/// gradients. Throws NumericError naming the first slot whose gradient is
/// not finite (no slot is modified in that case).
template <typename T>
void adam_step(std::initializer_list<ParamSet<T>*> sets, const AdamConfig& config);

template <typename T>
void adam_step(const std::vector<ParamSet<T>*>& sets, const AdamConfig& config);

/// Linear warmup from 0 to peak over the first warmup_fraction of steps, then
/// linear decay to 0 at total_steps.
class LinearWarmupDecay {
 public:
  LinearWarmupDecay(double peak, std::size_t total_steps, double warmup_fraction = 0.1);

  /// Learning rate for 0-based step index.
  double at(std::size_t step) const;

  std::size_t warmup_steps() const { return warmup_steps_; }

 private:
  double peak_;
  std::size_t total_steps_;
  std::size_t warmup_steps_;
};

}  // namespace transbert
