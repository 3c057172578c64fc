#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lwfm/tensor.hpp"

namespace lwfm {

/// Entry (i, j) is cosine(support pixel i, query pixel j).
struct MatchingMatrix {
  Matrix values;

  std::size_t n() const { return values.rows(); }
};

enum class AssignMethod { kHungarian, kNearestNeighbor, kGreedyRepair };

/// perm[i] is the query pixel paired with support pixel i. Hungarian
/// assignments are permutations; nearest-neighbour ones may repeat indices.
struct Assignment {
  std::vector<std::size_t> perm;
  AssignMethod method = AssignMethod::kHungarian;

  std::size_t n() const { return perm.size(); }
};

MatchingMatrix matching_matrix(const PixelMatrix& support,
                               const PixelMatrix& query);

/// Exact minimum-cost bipartite assignment on C = 1 - M (shortest augmenting
/// paths with potentials, O(n^3)). Among equal reduced costs the lowest query
/// index is taken, so the result is deterministic.
Assignment hungarian_assign(const MatchingMatrix& m);

/// Minimum-cost assignment on an arbitrary square cost matrix; returns
/// perm[row] = column.
std::vector<std::size_t> solve_min_cost_assignment(const Matrix& cost);

/// perm[i] = argmax_j M(i, j), ties to the lowest j.
Assignment nn_assign(const MatchingMatrix& m);

/// Turns a (possibly many-to-one) nearest-neighbour assignment into a
/// permutation: support rows are visited in descending order of their NN
/// similarity and each takes its best still-unused query pixel.
Assignment greedy_repair(const MatchingMatrix& m);

/// Sum over i of M(i, perm[i]).
double total_similarity(const MatchingMatrix& m, const Assignment& a);

/// Row i of the result is query row a.perm[i].
PixelMatrix rearrange(const PixelMatrix& query, const Assignment& a);

/// Residual bottleneck MLP for one backbone layer:
///   out = x + relu(relu(x W1 + b1) W2 + b2)
/// W1 is channels x hidden, W2 is hidden x channels, both row-major, and
/// hidden = max(1, channels / 2).
struct LayerMatcher {
  std::uint32_t layer_id = 0;
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  std::vector<double> b2;

  static std::size_t hidden_width(std::size_t channels);
  static LayerMatcher zeros(std::uint32_t layer_id, std::size_t channels);
  std::size_t parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }

  friend bool operator==(const LayerMatcher&, const LayerMatcher&) = default;
};

struct MatcherParams {
  std::vector<LayerMatcher> layers;

  /// nullptr when no matcher exists for the layer.
  const LayerMatcher* find(std::uint32_t layer_id) const;
  LayerMatcher* find(std::uint32_t layer_id);

  friend bool operator==(const MatcherParams&, const MatcherParams&) = default;
};

struct LayerChannels {
  std::uint32_t layer_id = 0;
  std::size_t channels = 0;
};

/// W1, W2 ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
MatcherParams init_matcher(std::span<const LayerChannels> layers,
                           std::uint64_t seed);

/// Pre-activations recorded for the backward pass.
struct MatcherActivations {
  Matrix hidden_pre;  // n x hidden: x W1 + b1
  Matrix out_pre;     // n x channels: relu(hidden_pre) W2 + b2
};

PixelMatrix matcher_forward(const PixelMatrix& x, const LayerMatcher& p,
                            MatcherActivations* activations = nullptr);

/// MPAR file: "MPAR" | u32 version=1 | u32 layer_count | u32 reserved=0 |
/// per layer: u32 layer_id, u32 channels, f32 W1, b1, W2, b2.
void write_matcher(const MatcherParams& params,
                   const std::filesystem::path& path);
MatcherParams read_matcher(const std::filesystem::path& path);

}  // namespace lwfm
