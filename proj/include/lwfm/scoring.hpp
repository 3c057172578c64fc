#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lwfm/lwe.hpp"
#include "lwfm/spm.hpp"
#include "lwfm/tensor.hpp"

namespace lwfm {

struct LayerScore {
  double critical = 0.0;
  double global = 0.0;
};

struct ScoreBreakdown {
  std::vector<std::uint32_t> layer_ids;
  std::vector<LayerScore> layers;
  double combined = 0.0;
};

/// Aligned-row cosines and the rows that made the top k.
struct CriticalSelection {
  std::vector<double> cosines;         // per aligned row
  std::vector<std::size_t> top_rows;   // descending cosine, ties to lower row
  double score = 0.0;
};

CriticalSelection select_critical(const PixelMatrix& support,
                                  const PixelMatrix& query, std::size_t k_top);

/// Sum of the k_top largest aligned-row cosines.
double critical_score(const PixelMatrix& support, const PixelMatrix& query,
                      std::size_t k_top);

/// Cosine between the two maps' mean embeddings.
double global_score(const FeatureMap& support, const FeatureMap& query);

/// alpha * max over layers of critical + mean over layers of global.
double pair_score(std::span<const LayerScore> per_layer, double alpha);

/// Mean of the K per-support pair scores of one class.
double class_score(std::span<const double> scores_vs_supports,
                   std::size_t k_shot);

struct PairConfig {
  double temperature = 5.0;
  double alpha = 0.25;
  std::size_t k_top = 5;
  std::size_t pooled = 3;
  AssignMethod assign = AssignMethod::kHungarian;

  /// k_top used for n pooled pixels: forced to 1 when n == 1, otherwise
  /// validated against [1, n].
  std::size_t effective_k_top(std::size_t n) const;
};

/// Everything the forward pass of one layer produced for one pair.
struct LayerTrace {
  std::uint32_t layer_id = 0;
  AttentionWeights weights;
  Assignment assignment;
  PixelMatrix support;      // reweighted support rows, anchor order
  PixelMatrix query;        // reweighted query rows after rearrangement
  bool matcher_applied = false;
  MatcherActivations support_activations;
  MatcherActivations query_activations;
  PixelMatrix support_out;  // after the matcher; empty when none is applied
  PixelMatrix query_out;
  CriticalSelection critical;
  double global = 0.0;
};

struct PairTrace {
  std::vector<LayerTrace> layers;
  std::size_t max_layer = 0;  // layer whose critical score is the maximum
  ScoreBreakdown breakdown;
};

/// Full pair pipeline over already pooled maps (one per layer, pooled x
/// pooled each): correlation, attention reweighting, global score,
/// assignment, rearrangement, optional matcher, critical score, fusion.
/// `matcher` may be null; otherwise it must hold every listed layer.
PairTrace trace_pair(std::span<const FeatureMap> support,
                     std::span<const FeatureMap> query,
                     std::span<const std::uint32_t> layer_ids,
                     const MatcherParams* matcher, const PairConfig& config);

ScoreBreakdown score_pair(std::span<const FeatureMap> support,
                          std::span<const FeatureMap> query,
                          std::span<const std::uint32_t> layer_ids,
                          const MatcherParams* matcher,
                          const PairConfig& config);

}  // namespace lwfm
