#include "transbert/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "transbert/errors.hpp"

namespace transbert::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw UsageError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b));
}

template <typename T>
void require_2d(const char* op, const BasicTensor<T>& t) {
  if (t.rank() != 2) {
    throw UsageError(std::string(op) + ": expected a matrix, got shape " +
                     shape_to_string(t.shape()));
  }
}

template <typename T, typename A, typename B>
void gemm_apply(T alpha, const A& a, const B& b, T beta, MutMap<T>& c) {
  if (beta == T{0}) {
    c.noalias() = alpha * (a * b);
  } else {
    if (beta != T{1}) c *= beta;
    c.noalias() += alpha * (a * b);
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  using Index = Eigen::Index;
  MutMap<T> cm(c, Index(m), Index(n), Eigen::OuterStride<>(Index(ldc)));
  if (k == 0) {
    if (beta == T{0}) {
      cm.setZero();
    } else {
      cm *= beta;
    }
    return;
  }
  const Index am = trans_a ? Index(k) : Index(m);
  const Index ak = trans_a ? Index(m) : Index(k);
  const Index bk = trans_b ? Index(n) : Index(k);
  const Index bn = trans_b ? Index(k) : Index(n);
  ConstMap<T> am_map(a, am, ak, Eigen::OuterStride<>(Index(lda)));
  ConstMap<T> bm_map(b, bk, bn, Eigen::OuterStride<>(Index(ldb)));
  if (!trans_a && !trans_b) {
    gemm_apply(alpha, am_map, bm_map, beta, cm);
  } else if (!trans_a && trans_b) {
    gemm_apply(alpha, am_map, bm_map.transpose(), beta, cm);
  } else if (trans_a && !trans_b) {
    gemm_apply(alpha, am_map.transpose(), bm_map, beta, cm);
  } else {
    gemm_apply(alpha, am_map.transpose(), bm_map.transpose(), beta, cm);
  }
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  BasicTensor<T> out({a.rows(), b.cols()});
  gemm<T>(false, false, a.rows(), b.cols(), a.cols(), T{1}, a.data(), a.cols(), b.data(),
          b.cols(), T{0}, out.data(), out.cols());
  return out;
}

template <typename T>
void matmul_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& a,
                     const BasicTensor<T>& b, BasicTensor<T>* grad_a, BasicTensor<T>* grad_b) {
  if (grad_out.rows() != a.rows() || grad_out.cols() != b.cols()) {
    shape_error("matmul_backward", grad_out.shape(), Shape{a.rows(), b.cols()});
  }
  if (grad_a) {
    if (grad_a->shape() != a.shape()) shape_error("matmul_backward", grad_a->shape(), a.shape());
    gemm<T>(false, true, a.rows(), a.cols(), b.cols(), T{1}, grad_out.data(), grad_out.cols(),
            b.data(), b.cols(), T{1}, grad_a->data(), a.cols());
  }
  if (grad_b) {
    if (grad_b->shape() != b.shape()) shape_error("matmul_backward", grad_b->shape(), b.shape());
    gemm<T>(true, false, b.rows(), b.cols(), a.rows(), T{1}, a.data(), a.cols(),
            grad_out.data(), grad_out.cols(), T{1}, grad_b->data(), b.cols());
  }
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
void add_row_bias(BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (bias.size() != x.cols()) shape_error("add_row_bias", x.shape(), bias.shape());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = x.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bias[c];
  }
}

template <typename T>
void row_bias_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_bias) {
  if (grad_bias.size() != grad_out.cols()) {
    shape_error("row_bias_backward", grad_out.shape(), grad_bias.shape());
  }
  const std::size_t cols = grad_out.cols();
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    const T* row = grad_out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) grad_bias[c] += row[c];
  }
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps, LayerNormCache<T>* cache) {
  const std::size_t cols = x.cols();
  if (gain.size() != cols) shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.size() != cols) shape_error("layer_norm", x.shape(), bias.shape());
  const std::size_t rows = x.rows();
  BasicTensor<T> out(x.shape());
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
  if (cache) {
    normalized = BasicTensor<T>(x.shape());
    inv_std.resize(rows);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T diff = in[c] - mean;
      var += diff * diff;
    }
    var /= static_cast<T>(cols);
    const T rstd = T{1} / std::sqrt(var + eps);
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const T xhat = (in[c] - mean) * rstd;
      o[c] = xhat * gain[c] + bias[c];
      if (cache) normalized[r * cols + c] = xhat;
    }
    if (cache) inv_std[r] = rstd;
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& gain,
                                   const LayerNormCache<T>& cache, BasicTensor<T>& grad_gain,
                                   BasicTensor<T>& grad_bias) {
  if (grad_out.shape() != cache.normalized.shape()) {
    shape_error("layer_norm_backward", grad_out.shape(), cache.normalized.shape());
  }
  const std::size_t cols = grad_out.cols();
  const std::size_t rows = grad_out.rows();
  BasicTensor<T> grad_in(grad_out.shape());
  std::vector<T> dxhat(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dy = grad_out.data() + r * cols;
    const T* xhat = cache.normalized.data() + r * cols;
    T mean_d = 0;
    T mean_dx = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      grad_gain[c] += dy[c] * xhat[c];
      grad_bias[c] += dy[c];
      dxhat[c] = dy[c] * gain[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xhat[c];
    }
    mean_d /= static_cast<T>(cols);
    mean_dx /= static_cast<T>(cols);
    T* dx = grad_in.data() + r * cols;
    const T rstd = cache.inv_std[r];
    for (std::size_t c = 0; c < cols; ++c) {
      dx[c] = rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
    }
  }
  return grad_in;
}

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const T k = static_cast<T>(kSqrt2OverPi);
  const T a = static_cast<T>(kGeluCoeff);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = T{0.5} * v * (T{1} + std::tanh(k * (v + a * v * v * v)));
  }
  return out;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x) {
  if (grad_out.shape() != x.shape()) shape_error("gelu_backward", grad_out.shape(), x.shape());
  BasicTensor<T> grad_in(x.shape());
  const T k = static_cast<T>(kSqrt2OverPi);
  const T a = static_cast<T>(kGeluCoeff);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T t = std::tanh(k * (v + a * v * v * v));
    const T d = T{0.5} * (T{1} + t) + T{0.5} * v * (T{1} - t * t) * k * (T{1} + T{3} * a * v * v);
    grad_in[i] = grad_out[i] * d;
  }
  return grad_in;
}

template <typename T>
void softmax_rows_inplace(std::span<T> x, std::size_t cols) {
  const std::size_t rows = cols ? x.size() / cols : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    if (!std::isfinite(mx)) {
      throw NumericError("softmax_rows: row has no finite entry");
    }
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const T inv = T{1} / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  softmax_rows_inplace<T>(out.values(), out.cols());
  return out;
}

template <typename T>
void softmax_rows_backward(std::span<const T> grad_out, std::span<const T> y, std::span<T> grad_in,
                           std::size_t cols) {
  const std::size_t rows = cols ? y.size() / cols : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dy = grad_out.data() + r * cols;
    const T* yr = y.data() + r * cols;
    T* dx = grad_in.data() + r * cols;
    T dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * yr[c];
    for (std::size_t c = 0; c < cols; ++c) dx[c] = yr[c] * (dy[c] - dot);
  }
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& y) {
  if (grad_out.shape() != y.shape()) {
    shape_error("softmax_rows_backward", grad_out.shape(), y.shape());
  }
  BasicTensor<T> grad_in(y.shape());
  softmax_rows_backward<T>(grad_out.values(), y.values(), grad_in.values(), y.cols());
  return grad_in;
}

template <typename T>
void dropout_inplace(std::span<T> x, double keep, bool train, Rng* rng, DropoutMask<T>* mask) {
  if (mask) mask->clear();
  if (!train || keep >= 1.0) return;
  if (keep <= 0.0) throw UsageError("dropout: keep probability must be in (0, 1]");
  if (!rng) throw UsageError("dropout: training mode requires an RNG stream");
  const T scale = static_cast<T>(1.0 / keep);
  std::vector<T> m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng->bernoulli(keep) ? scale : T{0};
    x[i] *= m[i];
  }
  if (mask) *mask = std::move(m);
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double keep, bool train, Rng* rng,
                       DropoutMask<T>* mask) {
  BasicTensor<T> out = x;
  dropout_inplace<T>(out.values(), keep, train, rng, mask);
  return out;
}

template <typename T>
void dropout_backward_inplace(std::span<T> grad, const DropoutMask<T>& mask) {
  if (mask.empty()) return;
  if (mask.size() != grad.size()) {
    throw UsageError("dropout_backward: mask length " + std::to_string(mask.size()) +
                     " does not match gradient length " + std::to_string(grad.size()));
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const DropoutMask<T>& mask) {
  BasicTensor<T> grad_in = grad_out;
  dropout_backward_inplace<T>(grad_in.values(), mask);
  return grad_in;
}

template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  require_2d("embedding_lookup", table);
  const std::size_t cols = table.cols();
  BasicTensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw UsageError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " out of range for table " + shape_to_string(table.shape()));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * cols, cols,
                out.data() + i * cols);
  }
  return out;
}

template <typename T>
void embedding_backward(const BasicTensor<T>& grad_out, std::span<const std::int32_t> ids,
                        BasicTensor<T>& grad_table) {
  const std::size_t cols = grad_table.cols();
  if (grad_out.rows() != ids.size() || grad_out.cols() != cols) {
    shape_error("embedding_backward", grad_out.shape(), grad_table.shape());
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    T* dst = grad_table.data() + static_cast<std::size_t>(ids[i]) * cols;
    const T* src = grad_out.data() + i * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
}

template <typename T>
T cross_entropy_row(std::span<const T> logits, std::size_t label, std::span<T> grad, T scale) {
  if (label >= logits.size()) {
    throw UsageError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : logits) mx = std::max(mx, v);
  T sum = 0;
  for (T v : logits) sum += std::exp(v - mx);
  const T log_z = mx + std::log(sum);
  if (!grad.empty()) {
    for (std::size_t c = 0; c < logits.size(); ++c) {
      grad[c] += scale * std::exp(logits[c] - log_z);
    }
    grad[label] -= scale;
  }
  return log_z - logits[label];
}

template <typename T>
T cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                BasicTensor<T>* grad_logits) {
  if (labels.size() != logits.rows()) {
    throw UsageError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_to_string(logits.shape()));
  }
  if (labels.empty()) throw UsageError("cross_entropy: empty batch");
  const T scale = T{1} / static_cast<T>(labels.size());
  if (grad_logits) *grad_logits = BasicTensor<T>(logits.shape());
  T total = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::span<T> g = grad_logits ? grad_logits->row(r) : std::span<T>{};
    total += cross_entropy_row<T>(logits.row(r), labels[r], g, scale);
  }
  return total * scale;
}

#define TRANSBERT_INSTANTIATE_OPS(T)                                                            \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,        \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);               \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template void matmul_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                   const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*);   \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template void add_row_bias<T>(BasicTensor<T>&, const BasicTensor<T>&);                       \
  template void row_bias_backward<T>(const BasicTensor<T>&, BasicTensor<T>&);                  \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, T, LayerNormCache<T>*);         \
  template BasicTensor<T> layer_norm_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                 const LayerNormCache<T>&, BasicTensor<T>&,    \
                                                 BasicTensor<T>&);                             \
  template BasicTensor<T> gelu<T>(const BasicTensor<T>&);                                      \
  template BasicTensor<T> gelu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template void softmax_rows_inplace<T>(std::span<T>, std::size_t);                            \
  template BasicTensor<T> softmax_rows<T>(const BasicTensor<T>&);                              \
  template void softmax_rows_backward<T>(std::span<const T>, std::span<const T>, std::span<T>, \
                                         std::size_t);                                         \
  template BasicTensor<T> softmax_rows_backward<T>(const BasicTensor<T>&,                      \
                                                   const BasicTensor<T>&);                     \
  template void dropout_inplace<T>(std::span<T>, double, bool, Rng*, DropoutMask<T>*);         \
  template BasicTensor<T> dropout<T>(const BasicTensor<T>&, double, bool, Rng*,                \
                                     DropoutMask<T>*);                                         \
  template void dropout_backward_inplace<T>(std::span<T>, const DropoutMask<T>&);              \
  template BasicTensor<T> dropout_backward<T>(const BasicTensor<T>&, const DropoutMask<T>&);   \
  template BasicTensor<T> embedding_lookup<T>(const BasicTensor<T>&,                           \
                                              std::span<const std::int32_t>);                  \
  template void embedding_backward<T>(const BasicTensor<T>&, std::span<const std::int32_t>,    \
                                      BasicTensor<T>&);                                        \
  template T cross_entropy_row<T>(std::span<const T>, std::size_t, std::span<T>, T);           \
  template T cross_entropy<T>(const BasicTensor<T>&, std::span<const std::size_t>,             \
                              BasicTensor<T>*);

TRANSBERT_INSTANTIATE_OPS(float)
TRANSBERT_INSTANTIATE_OPS(double)

#undef TRANSBERT_INSTANTIATE_OPS

}  // namespace transbert::ops
