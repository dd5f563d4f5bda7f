#include "transbert/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "transbert/errors.hpp"

namespace transbert {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw UsageError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::size_t rows, std::size_t cols,
                                      std::initializer_list<T> values) {
  return BasicTensor({rows, cols}, std::vector<T>(values));
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
void BasicTensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace transbert
