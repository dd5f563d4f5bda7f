#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transbert/rng.hpp"
#include "transbert/tensor.hpp"

// Layer primitives with explicit backward rules. Every backward function
// *accumulates* into parameter gradients and returns (or accumulates) the
// input gradient, so callers can compose them in a fixed order.
namespace transbert::ops {

/// C = alpha * op(A) * op(B) + beta * C over row-major buffers with leading
/// dimensions. op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

// ---- matmul --------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// grad_a += grad_out * b^T ; grad_b += a^T * grad_out. Either output may be null.
template <typename T>
void matmul_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& a,
                     const BasicTensor<T>& b, BasicTensor<T>* grad_a, BasicTensor<T>* grad_b);

// ---- add -----------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x[r, :] += bias for every row.
template <typename T>
void add_row_bias(BasicTensor<T>& x, const BasicTensor<T>& bias);

/// grad_bias += column sums of grad_out.
template <typename T>
void row_bias_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_bias);

// ---- layer norm ----------------------------------------------------------

template <typename T>
struct LayerNormCache {
  BasicTensor<T> normalized;
  std::vector<T> inv_std;
};

inline constexpr double kLayerNormEps = 1e-12;

/// Normalizes each row to zero mean / unit variance, then applies gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps, LayerNormCache<T>* cache);

template <typename T>
BasicTensor<T> layer_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& gain,
                                   const LayerNormCache<T>& cache, BasicTensor<T>& grad_gain,
                                   BasicTensor<T>& grad_bias);

// ---- gelu (tanh approximation) -----------------------------------------------

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x);

// ---- softmax over rows ---------------------------------------------------

/// Entries equal to -inf get probability exactly 0. Each row needs at least
/// one finite entry.
template <typename T>
void softmax_rows_inplace(std::span<T> x, std::size_t cols);

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

/// Returns dL/dx given y = softmax_rows(x) and dL/dy, over raw row spans.
template <typename T>
void softmax_rows_backward(std::span<const T> grad_out, std::span<const T> y, std::span<T> grad_in,
                           std::size_t cols);

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& y);

// ---- dropout ---------------------------------------------------------------

/// Per-element multiplier: 0 for dropped, 1/keep for kept. Empty in eval mode.
template <typename T>
using DropoutMask = std::vector<T>;

/// Inverted dropout. With train == false (or keep == 1) the input is returned
/// unchanged and the mask is left empty.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double keep, bool train, Rng* rng,
                       DropoutMask<T>* mask);

template <typename T>
void dropout_inplace(std::span<T> x, double keep, bool train, Rng* rng, DropoutMask<T>* mask);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const DropoutMask<T>& mask);

template <typename T>
void dropout_backward_inplace(std::span<T> grad, const DropoutMask<T>& mask);

// ---- embedding -----------------------------------------------------------

template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::int32_t> ids);

/// grad_table[ids[i], :] += grad_out[i, :]
template <typename T>
void embedding_backward(const BasicTensor<T>& grad_out, std::span<const std::int32_t> ids,
                        BasicTensor<T>& grad_table);

// ---- cross entropy -------------------------------------------------------

/// Negative log-softmax of `logits` at `label`. If `grad` is non-empty it
/// receives scale * (softmax(logits) - onehot(label)), accumulated.
template <typename T>
T cross_entropy_row(std::span<const T> logits, std::size_t label, std::span<T> grad, T scale);

/// Mean cross-entropy over rows of `logits`. If grad_logits is non-null it is
/// overwritten with d(mean)/d(logits).
template <typename T>
T cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels,
                BasicTensor<T>* grad_logits);

}  // namespace transbert::ops
