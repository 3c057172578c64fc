#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lwfm/episode.hpp"
#include "lwfm/scoring.hpp"
#include "lwfm/spm.hpp"

namespace lwfm {

/// Auxiliary linear classifier over training classes: logits = W e + b,
/// W is classes x channels row-major.
struct ClassifierParams {
  std::size_t classes = 0;
  std::size_t channels = 0;
  std::vector<double> w;
  std::vector<double> b;

  static ClassifierParams zeros(std::size_t classes, std::size_t channels);

  friend bool operator==(const ClassifierParams&,
                         const ClassifierParams&) = default;
};

struct TrainConfig {
  double beta = 0.25;
  double learning_rate = 0.01;
  double decay_factor = 0.05;
  std::vector<int> decay_epochs{4, 6, 8};
  int epochs = 10;
  std::size_t episodes_per_epoch = 100;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Softmax cross-entropy of the episode's class scores (max-shifted).
double metric_loss(std::span<const double> class_scores,
                   std::size_t true_class);
double classifier_loss(std::span<const double> embedding,
                       const ClassifierParams& p, std::size_t true_class);
double total_loss(double l1, double l2, double beta);

/// Forward record of one query against all supports of an episode.
struct QueryTrace {
  std::vector<std::vector<PairTrace>> pairs;  // [way][shot]
  std::vector<double> class_scores;
  std::size_t true_way = 0;
  double l1 = 0.0;
  std::vector<double> embedding;  // classifier input
  std::vector<double> probs;      // classifier softmax
  std::size_t true_label = 0;
  double l2 = 0.0;
  double total = 0.0;
};

struct EpisodeTrace {
  std::vector<QueryTrace> queries;
  double beta = 0.0;
  double alpha = 0.0;

  double mean_l1() const;
  double mean_l2() const;
  /// The training objective: mean over queries of beta * L1 + L2.
  double mean_total() const;
  double accuracy() const;
};

/// Runs the pipeline over every query of `episode` and records what
/// backward() needs. The classifier sees the mean embedding of the last
/// configured layer's pooled (un-reweighted) query map.
EpisodeTrace forward_episode(const PooledBank& bank, const Episode& episode,
                             const MatcherParams& matcher,
                             const ClassifierParams& classifier,
                             const Hyperparams& hp);

struct Gradients {
  MatcherParams matcher;
  ClassifierParams classifier;
};

/// Exact gradient of EpisodeTrace::mean_total() w.r.t. every matcher and
/// classifier parameter. Assignment indices, top-k rows and the max-layer
/// choice are constants of the recorded forward pass.
Gradients backward(const EpisodeTrace& trace, const MatcherParams& matcher,
                   const ClassifierParams& classifier);

/// Smallest distance of the trace to a point where one of its discrete
/// selections would flip: top-k boundary gaps, max-layer gaps and ReLU
/// pre-activations on the rows that carry gradient.
double selection_margin(const EpisodeTrace& trace);

MatcherParams sgd_step(MatcherParams params, const MatcherParams& grads,
                       double lr);
ClassifierParams sgd_step(ClassifierParams params,
                          const ClassifierParams& grads, double lr);

/// Base rate times decay_factor once per listed decay epoch <= epoch.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  double mean_total = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  MatcherParams matcher;
  ClassifierParams classifier;
  std::vector<EpochLog> log;
};

/// Episodic SGD: one parameter update per sampled episode.
TrainResult train(const FeatureBank& bank, const Hyperparams& hp,
                  const TrainConfig& cfg);

/// epoch,lr,mean_l1,mean_l2,mean_total,train_accuracy
void write_train_log(std::span<const EpochLog> log,
                     const std::filesystem::path& path);

}  // namespace lwfm
