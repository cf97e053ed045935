#pragma once

#include "htrlab/autodiff/tensor.hpp"
#include "htrlab/nn/vocab.hpp"

namespace htrlab::nn {

struct LossSpec {
  Vocabulary vocab = Vocabulary::lowercase_latin();
  double label_smoothing = 0.0;

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

/// Mean over samples of -(1/L') * sum_t w_t log p(y_t), where L' counts the
/// non-PAD targets of the sample and PAD steps contribute nothing.
/// logits: [N,T,V] or [T,V]. weights (optional): [N,T] or [T].
ad::Tensor sequence_cross_entropy(const ad::Tensor& logits, const TokenBatch& targets,
                                  const ad::Tensor* weights = nullptr, double label_smoothing = 0.0);

/// Per-sample variant: returns [N] losses instead of their mean.
ad::Tensor sequence_cross_entropy_per_sample(const ad::Tensor& logits, const TokenBatch& targets,
                                             const ad::Tensor* weights = nullptr, double label_smoothing = 0.0);

}  // namespace htrlab::nn
