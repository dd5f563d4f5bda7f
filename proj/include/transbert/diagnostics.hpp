#pragma once

#include <cstddef>
#include <cstdint>

#include "transbert/encoder.hpp"
#include "transbert/grad_check.hpp"

namespace transbert {

enum class GradCheckTarget { classification, multiple_choice, pretrain };

const char* grad_check_target_name(GradCheckTarget target);

struct ModelGradCheckOptions {
  ModelConfig model{2, 32, 2, 64, 0, 32, 2, 0.9};  // vocab_size filled in from the vocabulary
  std::size_t max_len = 24;
  std::size_t batch_size = 4;
  std::size_t probes = 200;
  std::uint64_t seed = 0;
};

/// Finite-difference check of one batch loss in 64-bit arithmetic, on a
/// synthetic batch and a vocabulary learned from the synthetic lexicon.
/// Dropout is active with a mask stream reset for every evaluation.
GradCheckResult check_model_gradients(GradCheckTarget target, const ModelGradCheckOptions& options);

}  // namespace transbert
