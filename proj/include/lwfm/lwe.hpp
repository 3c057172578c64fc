#pragma once

#include <cstddef>
#include <vector>

#include "lwfm/tensor.hpp"

namespace lwfm {

/// n x n matrix of raw dot products between pooled support pixel i and
/// pooled query pixel j.
struct CorrelationMap {
  Matrix values;

  std::size_t n() const { return values.rows(); }
};

/// One positive weight per pooled pixel; entries sum to n (mean weight 1).
struct WeightVector {
  std::vector<double> values;

  std::size_t n() const { return values.size(); }
};

struct AttentionWeights {
  WeightVector support;
  WeightVector query;
};

/// Pools both maps to pooled x pooled and correlates the flattened pixels.
CorrelationMap cross_correlation(const FeatureMap& support,
                                 const FeatureMap& query, std::size_t pooled);

/// Correlation of already pooled and flattened maps.
CorrelationMap cross_correlation(const PixelMatrix& support,
                                 const PixelMatrix& query);

/// Bidirectional temperature softmax over the correlation map:
///   support[i] = sum_j softmax_i(corr(., j) / T)[i]
///   query[j]   = sum_i softmax_j(corr(i, .) / T)[j]
/// i.e. every query column distributes one unit of attention over support
/// pixels (and vice versa), so each vector sums to n. The softmaxes are
/// max-shifted; with extreme corr/T ratios a weight can underflow to 0.
AttentionWeights attention_weights(const CorrelationMap& corr,
                                   double temperature);

/// Scales pixel p's channel vector by w[p].
FeatureMap reweight(const FeatureMap& m, const WeightVector& w);

}  // namespace lwfm
