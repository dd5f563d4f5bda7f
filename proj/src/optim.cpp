#include "transbert/optim.hpp"

#include <cmath>

#include "transbert/errors.hpp"

namespace transbert {

template <typename T>
void adam_step(const std::vector<ParamSet<T>*>& sets, const AdamConfig& config) {
  if (!(config.learning_rate >= 0.0)) {
    throw UsageError("adam_step: learning rate must be non-negative");
  }
  if (config.weight_decay < 0.0) throw UsageError("adam_step: weight decay must be non-negative");
  for (const auto* set : sets) {
    for (const auto& slot : *set) {
      if (!slot.grad.all_finite()) {
        throw NumericError("adam_step: non-finite gradient in parameter '" + slot.name + "'");
      }
    }
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  for (auto* set : sets) {
    for (auto& slot : *set) {
      ++slot.step_count;
      const double t = static_cast<double>(slot.step_count);
      const double corr1 = 1.0 - std::pow(b1, t);
      const double corr2 = 1.0 - std::pow(b2, t);
      const double decay = slot.apply_weight_decay ? config.weight_decay : 0.0;
      T* w = slot.value.data();
      T* g = slot.grad.data();
      T* m = slot.adam_m.data();
      T* v = slot.adam_v.data();
      for (std::size_t i = 0; i < slot.value.size(); ++i) {
        const double gi = g[i];
        const double mi = b1 * m[i] + (1.0 - b1) * gi;
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = (mi / corr1) / (std::sqrt(vi / corr2) + config.eps);
        w[i] = static_cast<T>(w[i] - config.learning_rate * (update + decay * w[i]));
        g[i] = T{0};
      }
    }
  }
}

template <typename T>
void adam_step(std::initializer_list<ParamSet<T>*> sets, const AdamConfig& config) {
  adam_step<T>(std::vector<ParamSet<T>*>(sets), config);
}

template void adam_step<float>(const std::vector<ParamSet<float>*>&, const AdamConfig&);
template void adam_step<double>(const std::vector<ParamSet<double>*>&, const AdamConfig&);
template void adam_step<float>(std::initializer_list<ParamSet<float>*>, const AdamConfig&);
template void adam_step<double>(std::initializer_list<ParamSet<double>*>, const AdamConfig&);

LinearWarmupDecay::LinearWarmupDecay(double peak, std::size_t total_steps,
                                     double warmup_fraction)
    : peak_(peak),
      total_steps_(total_steps),
      warmup_steps_(static_cast<std::size_t>(warmup_fraction * static_cast<double>(total_steps))) {
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw UsageError("warmup fraction must be in [0, 1]");
  }
}

double LinearWarmupDecay::at(std::size_t step) const {
  if (total_steps_ == 0) return peak_;
  if (step < warmup_steps_) {
    return peak_ * static_cast<double>(step + 1) / static_cast<double>(warmup_steps_);
  }
  const std::size_t decay_steps = total_steps_ - warmup_steps_;
  if (decay_steps == 0 || step >= total_steps_) return 0.0;
  return peak_ * static_cast<double>(total_steps_ - step) / static_cast<double>(decay_steps);
}

}  // namespace transbert
