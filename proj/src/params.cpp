#include "transbert/params.hpp"

#include "transbert/errors.hpp"

namespace transbert {

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Shape shape, bool apply_weight_decay) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  ParamSlot<T> slot;
  slot.name = name;
  slot.value = BasicTensor<T>(shape);
  slot.grad = BasicTensor<T>(shape);
  slot.adam_m = BasicTensor<T>(shape);
  slot.adam_v = BasicTensor<T>(std::move(shape));
  slot.apply_weight_decay = apply_weight_decay;
  index_.emplace(std::move(name), slots_.size());
  slots_.push_back(std::move(slot));
  return slots_.size() - 1;
}

template <typename T>
std::size_t ParamSet<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? slots_.size() : it->second;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& s : slots_) s.grad.zero();
}

template <typename T>
std::size_t ParamSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.value.size();
  return n;
}

template <typename T>
void ParamSet<T>::init_normal(Rng& rng, double stddev) {
  for (auto& s : slots_) {
    for (auto& v : s.value.values()) v = static_cast<T>(rng.normal() * stddev);
  }
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace transbert
