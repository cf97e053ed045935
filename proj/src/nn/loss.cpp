#include "htrlab/nn/loss.hpp"

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/error.hpp"

namespace htrlab::nn {

using namespace htrlab::ad;

Tensor sequence_cross_entropy_per_sample(const Tensor& logits, const TokenBatch& targets, const Tensor* weights,
                                         double label_smoothing) {
  require(logits.ndim() == 2 || logits.ndim() == 3, ErrorCode::ShapeMismatch,
          "sequence_cross_entropy expects [T,V] or [N,T,V] logits");
  const Tensor lg = logits.ndim() == 2 ? reshape(logits, {1, logits.dim(0), logits.dim(1)}) : logits;
  const std::int64_t N = lg.dim(0), T = lg.dim(1), V = lg.dim(2);
  require(targets.batch == N && targets.length == T, ErrorCode::ShapeMismatch,
          "targets [" + std::to_string(targets.batch) + "," + std::to_string(targets.length) +
              "] do not match logits " + shape_str(logits.shape()));
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, ErrorCode::InvalidArgument,
          "label smoothing must lie in [0,1)");

  std::vector<double> dist(static_cast<std::size_t>(N * T * V), 0.0);
  std::vector<double> scale(static_cast<std::size_t>(N * T), 0.0);
  const double off = label_smoothing / static_cast<double>(V);
  for (std::int64_t b = 0; b < N; ++b) {
    std::int64_t kept = 0;
    for (std::int64_t t = 0; t < T; ++t) {
      const auto y = targets.at(b, t);
      require(y >= 0 && y < V, ErrorCode::IndexOutOfVocab,
              "target id " + std::to_string(y) + " outside vocabulary of " + std::to_string(V));
      if (y != Vocabulary::kPad) ++kept;
    }
    for (std::int64_t t = 0; t < T; ++t) {
      const auto y = targets.at(b, t);
      if (y == Vocabulary::kPad) continue;
      double* row = dist.data() + (b * T + t) * V;
      if (label_smoothing > 0.0)
        for (std::int64_t v = 0; v < V; ++v) row[v] = off;
      row[y] += 1.0 - label_smoothing;
      scale[static_cast<std::size_t>(b * T + t)] = 1.0 / static_cast<double>(kept);
    }
  }

  const Tensor picked = sum(log_softmax(lg, 2) * Tensor::from({N, T, V}, std::move(dist)), 2);  // [N,T]
  Tensor w = Tensor::from({N, T}, std::move(scale));
  if (weights) {
    require(weights->numel() == N * T, ErrorCode::ShapeMismatch,
            "weights " + shape_str(weights->shape()) + " do not match targets");
    w = w * reshape(*weights, {N, T});
  }
  return neg(sum(picked * w, 1));
}

Tensor sequence_cross_entropy(const Tensor& logits, const TokenBatch& targets, const Tensor* weights,
                              double label_smoothing) {
  return mean(sequence_cross_entropy_per_sample(logits, targets, weights, label_smoothing));
}

}  // namespace htrlab::nn
