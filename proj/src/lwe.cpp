#include "lwfm/lwe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lwfm {
namespace {

double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace

CorrelationMap cross_correlation(const FeatureMap& support,
                                 const FeatureMap& query, std::size_t pooled) {
  if (support.c() != query.c()) {
    throw std::invalid_argument("cross_correlation: channel mismatch");
  }
  return cross_correlation(
      flatten_spatial(adaptive_avg_pool(support, pooled, pooled)),
      flatten_spatial(adaptive_avg_pool(query, pooled, pooled)));
}

CorrelationMap cross_correlation(const PixelMatrix& support,
                                 const PixelMatrix& query) {
  if (support.c() != query.c()) {
    throw std::invalid_argument("cross_correlation: channel mismatch");
  }
  if (support.n() != query.n()) {
    throw std::invalid_argument("cross_correlation: pixel count mismatch");
  }
  const std::size_t n = support.n();
  Matrix corr(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      corr(i, j) = dot(support.row(i), query.row(j));
    }
  }
  return {std::move(corr)};
}

AttentionWeights attention_weights(const CorrelationMap& corr,
                                   double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument(
        "attention_weights: temperature must be positive");
  }
  const Matrix& m = corr.values;
  const std::size_t n = corr.n();
  // Softmax terms of column j over support index i, and of row i over query
  // index j. Each weight sums its n terms in sorted order, which makes the
  // result exactly covariant under pixel permutations.
  Matrix column_softmax(n, n);
  Matrix row_softmax(n, n);
  std::vector<double> e(n);

  for (std::size_t j = 0; j < n; ++j) {
    double top = m(0, j);
    for (std::size_t i = 1; i < n; ++i) top = std::max(top, m(i, j));
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp((m(i, j) - top) / temperature);
    }
    const double z = sorted_sum(e);
    for (std::size_t i = 0; i < n; ++i) column_softmax(i, j) = e[i] / z;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double top = m(i, 0);
    for (std::size_t j = 1; j < n; ++j) top = std::max(top, m(i, j));
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp((m(i, j) - top) / temperature);
    }
    const double z = sorted_sum(e);
    for (std::size_t j = 0; j < n; ++j) row_softmax(i, j) = e[j] / z;
  }

  std::vector<double> support(n);
  std::vector<double> query(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) e[j] = column_softmax(i, j);
    support[i] = sorted_sum(e);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) e[i] = row_softmax(i, j);
    query[j] = sorted_sum(e);
  }
  return {{std::move(support)}, {std::move(query)}};
}

FeatureMap reweight(const FeatureMap& m, const WeightVector& w) {
  if (w.n() != m.pixel_count()) {
    throw std::invalid_argument("reweight: weight count " +
                                std::to_string(w.n()) + " != pixel count " +
                                std::to_string(m.pixel_count()));
  }
  std::vector<double> out(m.values().begin(), m.values().end());
  const std::size_t c = m.c();
  for (std::size_t p = 0; p < w.n(); ++p) {
    for (std::size_t k = 0; k < c; ++k) out[p * c + k] *= w.values[p];
  }
  return FeatureMap(m.h(), m.w(), c, std::move(out));
}

}  // namespace lwfm
