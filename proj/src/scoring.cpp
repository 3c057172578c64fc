#include "lwfm/scoring.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lwfm {
namespace {

// Row p scaled by w[p]; the flattened form of reweight().
PixelMatrix scale_rows(const PixelMatrix& rows, const WeightVector& w) {
  if (w.n() != rows.n()) {
    throw std::invalid_argument("reweight: weight count mismatch");
  }
  std::vector<double> out(rows.values().begin(), rows.values().end());
  const std::size_t c = rows.c();
  for (std::size_t p = 0; p < w.n(); ++p) {
    for (std::size_t k = 0; k < c; ++k) out[p * c + k] *= w.values[p];
  }
  return PixelMatrix(rows.n(), c, std::move(out));
}

// Same summation order as mean_embedding().
std::vector<double> row_mean(const PixelMatrix& rows) {
  std::vector<double> mean(rows.c(), 0.0);
  for (std::size_t p = 0; p < rows.n(); ++p) {
    auto r = rows.row(p);
    for (std::size_t k = 0; k < rows.c(); ++k) mean[k] += r[k];
  }
  for (double& v : mean) v /= static_cast<double>(rows.n());
  return mean;
}

}  // namespace

CriticalSelection select_critical(const PixelMatrix& support,
                                  const PixelMatrix& query,
                                  std::size_t k_top) {
  if (support.n() != query.n() || support.c() != query.c()) {
    throw std::invalid_argument("critical_score: shape mismatch");
  }
  const std::size_t n = support.n();
  if (k_top < 1 || k_top > n) {
    throw std::invalid_argument("critical_score: k_top " +
                                std::to_string(k_top) + " outside [1, " +
                                std::to_string(n) + "]");
  }
  CriticalSelection sel;
  sel.cosines.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sel.cosines[i] = cosine(support.row(i), query.row(i));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sel.cosines[a] > sel.cosines[b];
  });
  sel.top_rows.assign(order.begin(), order.begin() + k_top);
  for (std::size_t r : sel.top_rows) sel.score += sel.cosines[r];
  return sel;
}

double critical_score(const PixelMatrix& support, const PixelMatrix& query,
                      std::size_t k_top) {
  return select_critical(support, query, k_top).score;
}

double global_score(const FeatureMap& support, const FeatureMap& query) {
  if (support.h() != query.h() || support.w() != query.w() ||
      support.c() != query.c()) {
    throw std::invalid_argument("global_score: shape mismatch");
  }
  return cosine(mean_embedding(support), mean_embedding(query));
}

double pair_score(std::span<const LayerScore> per_layer, double alpha) {
  if (per_layer.empty()) {
    throw std::invalid_argument("pair_score: no layers");
  }
  double best = per_layer.front().critical;
  double global_sum = 0.0;
  for (const LayerScore& s : per_layer) {
    best = std::max(best, s.critical);
    global_sum += s.global;
  }
  return alpha * best + global_sum / static_cast<double>(per_layer.size());
}

double class_score(std::span<const double> scores_vs_supports,
                   std::size_t k_shot) {
  if (scores_vs_supports.empty() || scores_vs_supports.size() != k_shot) {
    throw std::invalid_argument("class_score: expected " +
                                std::to_string(k_shot) + " scores, got " +
                                std::to_string(scores_vs_supports.size()));
  }
  double sum = 0.0;
  for (double s : scores_vs_supports) sum += s;
  return sum / static_cast<double>(k_shot);
}

std::size_t PairConfig::effective_k_top(std::size_t n) const {
  if (n == 1) return 1;
  if (k_top < 1 || k_top > n) {
    throw std::invalid_argument("k_top " + std::to_string(k_top) +
                                " outside [1, " + std::to_string(n) + "]");
  }
  return k_top;
}

PairTrace trace_pair(std::span<const FeatureMap> support,
                     std::span<const FeatureMap> query,
                     std::span<const std::uint32_t> layer_ids,
                     const MatcherParams* matcher, const PairConfig& config) {
  if (layer_ids.empty()) {
    throw std::invalid_argument("trace_pair: no layers");
  }
  if (support.size() != layer_ids.size() || query.size() != layer_ids.size()) {
    throw std::invalid_argument("trace_pair: one map per layer required");
  }
  PairTrace trace;
  trace.breakdown.layer_ids.assign(layer_ids.begin(), layer_ids.end());
  for (std::size_t l = 0; l < layer_ids.size(); ++l) {
    const FeatureMap& s = support[l];
    const FeatureMap& q = query[l];
    if (s.h() != config.pooled || s.w() != config.pooled ||
        q.h() != config.pooled || q.w() != config.pooled) {
      throw std::invalid_argument("trace_pair: layer " +
                                  std::to_string(layer_ids[l]) +
                                  " maps are not pooled to " +
                                  std::to_string(config.pooled));
    }
    if (s.c() != q.c()) {
      throw std::invalid_argument("trace_pair: channel mismatch");
    }

    LayerTrace lt;
    lt.layer_id = layer_ids[l];
    const PixelMatrix s_rows = flatten_spatial(s);
    const PixelMatrix q_rows = flatten_spatial(q);
    lt.weights = attention_weights(cross_correlation(s_rows, q_rows),
                                   config.temperature);
    lt.support = scale_rows(s_rows, lt.weights.support);
    const PixelMatrix q_weighted = scale_rows(q_rows, lt.weights.query);
    lt.global = cosine(row_mean(lt.support), row_mean(q_weighted));

    const MatchingMatrix m = matching_matrix(lt.support, q_weighted);
    lt.assignment = config.assign == AssignMethod::kNearestNeighbor
                        ? nn_assign(m)
                        : hungarian_assign(m);
    lt.query = rearrange(q_weighted, lt.assignment);

    const std::size_t k_top = config.effective_k_top(lt.support.n());
    if (matcher != nullptr) {
      const LayerMatcher* p = matcher->find(lt.layer_id);
      if (p == nullptr) {
        throw std::invalid_argument("trace_pair: matcher has no layer " +
                                    std::to_string(lt.layer_id));
      }
      lt.matcher_applied = true;
      lt.support_out = matcher_forward(lt.support, *p, &lt.support_activations);
      lt.query_out = matcher_forward(lt.query, *p, &lt.query_activations);
      lt.critical = select_critical(lt.support_out, lt.query_out, k_top);
    } else {
      lt.critical = select_critical(lt.support, lt.query, k_top);
    }

    trace.breakdown.layers.push_back({lt.critical.score, lt.global});
    if (lt.critical.score > trace.breakdown.layers[trace.max_layer].critical) {
      trace.max_layer = l;
    }
    trace.layers.push_back(std::move(lt));
  }
  trace.breakdown.combined = pair_score(trace.breakdown.layers, config.alpha);
  return trace;
}

ScoreBreakdown score_pair(std::span<const FeatureMap> support,
                          std::span<const FeatureMap> query,
                          std::span<const std::uint32_t> layer_ids,
                          const MatcherParams* matcher,
                          const PairConfig& config) {
  return trace_pair(support, query, layer_ids, matcher, config).breakdown;
}

}  // namespace lwfm
