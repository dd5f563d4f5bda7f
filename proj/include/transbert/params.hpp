#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "transbert/rng.hpp"
#include "transbert/tensor.hpp"

namespace transbert {

/// One trainable tensor with its gradient and Adam moments. All four tensors
/// share a shape.
template <typename T>
struct ParamSlot {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
  std::int64_t step_count = 0;
  bool apply_weight_decay = true;
};

/// Ordered collection of uniquely named parameters. Insertion order is the
/// canonical order (checkpoint manifests, optimizer traversal).
template <typename T>
class ParamSet {
 public:
  /// Adds a zero-initialized slot and returns its index. Names must be unique.
  std::size_t add(std::string name, Shape shape, bool apply_weight_decay = true);

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }

  ParamSlot<T>& operator[](std::size_t i) { return slots_[i]; }
  const ParamSlot<T>& operator[](std::size_t i) const { return slots_[i]; }

  BasicTensor<T>& value(std::size_t i) { return slots_[i].value; }
  const BasicTensor<T>& value(std::size_t i) const { return slots_[i].value; }
  BasicTensor<T>& grad(std::size_t i) { return slots_[i].grad; }

  /// Index of `name`, or size() when absent.
  std::size_t find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != size(); }

  auto begin() { return slots_.begin(); }
  auto end() { return slots_.end(); }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }

  void zero_grad();
  std::size_t parameter_count() const;

  /// Fills every slot's value with N(0, stddev^2).
  void init_normal(Rng& rng, double stddev);

  /// Element-wise copy with type conversion. Optimizer state is reset.
  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& s : slots_) {
      const auto i = out.add(s.name, s.value.shape(), s.apply_weight_decay);
      out.value(i) = s.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<ParamSlot<T>> slots_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace transbert
