#ifndef SPECT_OBJECTIVE_HPP
#define SPECT_OBJECTIVE_HPP

#include <vector>

#include "spect/nn/ops.hpp"

namespace spect {

enum class Reduction { mean, sum };

/// w_c = N_c / sum_j N_j with N_c = n / n_c: rarer classes weigh more and
/// the weights sum to 1. Zero counts are rejected (the weight is undefined;
/// merge or drop such classes explicitly).
inline std::vector<double> compute_class_weights(const std::vector<Index>& counts) {
  double n = 0.0;
  for (Index c : counts) {
    if (c <= 0) throw ValidationError("class weight undefined for a zero-count class");
    n += static_cast<double>(c);
  }
  std::vector<double> w(counts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    w[i] = n / static_cast<double>(counts[i]);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

template <typename S>
struct WceResult {
  double loss = 0.0;
  Tensor<S> glogits;  // d loss / d logits, reduction included
};

/// loss_i = -w_{y_i} * ln softmax(logits_i)_{y_i}, summed or averaged over
/// the batch; gradient_i = w_{y_i} * (softmax(logits_i) - onehot(y_i)).
/// The log-probability is computed via log-sum-exp with max subtraction.
template <typename S>
WceResult<S> weighted_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                                    const std::vector<double>& w, Reduction reduction) {
  Index b = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != b) throw ShapeError("labels/logits batch mismatch");
  WceResult<S> res;
  res.glogits = Tensor<S>({b, c});
  double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(b) : 1.0;
  for (Index i = 0; i < b; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ValidationError("label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    double wy = w[static_cast<std::size_t>(y)];
    ConstVecMap<S> zi(logits.data() + i * c, c);
    double mx = static_cast<double>(zi.maxCoeff());
    double denom = 0.0;
    for (Index j = 0; j < c; ++j) denom += std::exp(static_cast<double>(zi[j]) - mx);
    double log_denom = std::log(denom);
    res.loss += -wy * (static_cast<double>(zi[y]) - mx - log_denom);
    for (Index j = 0; j < c; ++j) {
      double p = std::exp(static_cast<double>(zi[j]) - mx) / denom;
      res.glogits(i, j) = static_cast<S>(scale * wy * (p - (j == y ? 1.0 : 0.0)));
    }
  }
  res.loss *= scale;
  return res;
}

}  // namespace spect

#endif  // SPECT_OBJECTIVE_HPP
