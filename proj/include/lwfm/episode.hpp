#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lwfm/feature_bank.hpp"
#include "lwfm/scoring.hpp"
#include "lwfm/spm.hpp"

namespace lwfm {

struct Hyperparams {
  double temperature = 5.0;
  double alpha = 0.25;
  double beta = 0.25;
  std::size_t k_top = 5;
  std::size_t pooled = 3;
  std::vector<std::uint32_t> layer_ids{7, 8};
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t query_per_class = 15;
  std::size_t episode_count = 2000;
  std::uint64_t seed = 42;
  AssignMethod assign = AssignMethod::kHungarian;
  std::size_t threads = 1;

  /// Throws ConfigError on T <= 0, pooled < 1, k_top outside [1, pooled^2]
  /// (pooled == 1 forces k_top to 1), n_way < 2, k_shot < 1, empty layers.
  void validate() const;
  PairConfig pair_config() const;
};

/// Per-dataset values for alpha, beta and the learning-rate schedule.
struct Preset {
  std::string name;
  double alpha;
  double beta;
  int epochs;
  std::vector<int> decay_epochs;
};

std::span<const Preset> presets();
/// Case-insensitive lookup; throws ConfigError for unknown names.
const Preset& find_preset(const std::string& name);

struct Episode {
  std::vector<std::uint32_t> classes;            // n_way bank labels
  std::vector<std::vector<std::size_t>> support;  // [way][shot] image index
  std::vector<std::vector<std::size_t>> query;    // [way][q] image index
};

/// Independent generator for one episode: seeded from (seed, index) so
/// episodes do not depend on evaluation order or worker count.
std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t index);

/// Classes uniformly without replacement among those holding at least
/// k_shot + query_per_class images, then disjoint support/query images.
Episode sample_episode(const FeatureBank& bank, const Hyperparams& hp,
                       std::mt19937_64& rng);

/// Every image's maps for the configured layers, pooled once.
class PooledBank {
 public:
  PooledBank(const FeatureBank& bank, std::span<const std::uint32_t> layer_ids,
             std::size_t pooled);

  std::span<const FeatureMap> image(std::size_t index) const {
    return maps_.at(index);
  }
  std::span<const std::uint32_t> layer_ids() const { return layer_ids_; }
  std::size_t image_count() const { return maps_.size(); }
  std::uint32_t label(std::size_t index) const { return labels_.at(index); }
  std::uint32_t class_count() const { return class_count_; }

 private:
  std::vector<std::uint32_t> layer_ids_;
  std::vector<std::vector<FeatureMap>> maps_;  // [image][layer]
  std::vector<std::uint32_t> labels_;
  std::uint32_t class_count_;
};

struct Classification {
  std::size_t predicted = 0;   // index into Episode::classes
  std::vector<double> scores;  // one class score per way
};

/// Class score of every way (mean pair score over its K supports); argmax
/// with ties to the lowest way index.
Classification classify_query(const PooledBank& bank, std::size_t query_image,
                              const Episode& episode,
                              const MatcherParams* matcher,
                              const Hyperparams& hp);

std::size_t argmax_lowest(std::span<const double> scores);

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;
  /// Optional: [episode][query][way] class scores.
  std::vector<std::vector<std::vector<double>>> scores;
};

/// Summary of per-episode accuracies: mean and 1.96 * stddev / sqrt(E)
/// (population stddev).
void summarize(EvalReport& report);

/// Replacement for the score computation, used by tests and baselines.
using QueryScorer = std::function<std::vector<double>(
    const Episode& episode, std::uint64_t episode_index,
    std::size_t query_image)>;

EvalReport evaluate(const FeatureBank& bank, const MatcherParams* matcher,
                    const Hyperparams& hp, bool keep_scores = false);
EvalReport evaluate_with(const FeatureBank& bank, const Hyperparams& hp,
                         const QueryScorer& scorer, bool keep_scores = false);

/// CSV (episode,accuracy rows then mean and ci95 rows) or, for a .json
/// path, a JSON object.
void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace lwfm
