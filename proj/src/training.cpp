#include "lwfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lwfm/errors.hpp"

namespace lwfm {
namespace {

// Softmax with max-subtraction; returns the probabilities.
std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// -log softmax(logits)[target], evaluated as logsumexp - logit.
double cross_entropy(std::span<const double> logits, std::size_t target) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - top);
  return top + std::log(z) - logits[target];
}

std::vector<double> classifier_logits(std::span<const double> embedding,
                                      const ClassifierParams& p) {
  if (embedding.size() != p.channels) {
    throw std::invalid_argument("classifier: embedding length " +
                                std::to_string(embedding.size()) +
                                " != channels " + std::to_string(p.channels));
  }
  std::vector<double> logits(p.classes);
  for (std::size_t k = 0; k < p.classes; ++k) {
    double s = p.b[k];
    for (std::size_t i = 0; i < p.channels; ++i) {
      s += p.w[k * p.channels + i] * embedding[i];
    }
    logits[k] = s;
  }
  return logits;
}

// d cos(a, b) / da, zero where the cosine is pinned to 0 by the epsilon rule.
void cosine_grad(std::span<const double> a, std::span<const double> b,
                 double scale, std::vector<double>& ga) {
  const double na = norm(a), nb = norm(b);
  ga.assign(a.size(), 0.0);
  if (na < kCosineEpsilon || nb < kCosineEpsilon) return;
  const double cos = dot(a, b) / (na * nb);
  for (std::size_t k = 0; k < a.size(); ++k) {
    ga[k] = scale * (b[k] / (na * nb) - cos * a[k] / (na * na));
  }
}

// Accumulates the parameter gradient of one matcher row given dL/d(output).
void matcher_row_backward(std::span<const double> x, const LayerMatcher& p,
                          const MatcherActivations& act, std::size_t row,
                          std::span<const double> g_out, LayerMatcher& grad) {
  const std::size_t c = p.channels, h = p.hidden;
  std::vector<double> g2(c);
  for (std::size_t j = 0; j < c; ++j) {
    g2[j] = act.out_pre(row, j) > 0.0 ? g_out[j] : 0.0;
    grad.b2[j] += g2[j];
  }
  for (std::size_t k = 0; k < h; ++k) {
    const double z1 = act.hidden_pre(row, k);
    if (z1 <= 0.0) continue;  // relu(z1) = 0: no W2 gradient, no path back
    double gh = 0.0;
    const double* w2 = p.w2.data() + k * c;
    double* dw2 = grad.w2.data() + k * c;
    for (std::size_t j = 0; j < c; ++j) {
      dw2[j] += z1 * g2[j];
      gh += w2[j] * g2[j];
    }
    grad.b1[k] += gh;
    for (std::size_t i = 0; i < c; ++i) grad.w1[i * h + k] += x[i] * gh;
  }
}

MatcherParams zeros_like(const MatcherParams& p) {
  MatcherParams z;
  for (const LayerMatcher& l : p.layers) {
    z.layers.push_back(LayerMatcher::zeros(l.layer_id, l.channels));
  }
  return z;
}

void axpy(std::vector<double>& p, const std::vector<double>& g, double lr) {
  if (p.size() != g.size()) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

}  // namespace

ClassifierParams ClassifierParams::zeros(std::size_t classes,
                                         std::size_t channels) {
  return {classes, channels, std::vector<double>(classes * channels, 0.0),
          std::vector<double>(classes, 0.0)};
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("decay factor must be in (0, 1]");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!std::isfinite(beta)) throw ConfigError("beta must be finite");
}

double metric_loss(std::span<const double> class_scores,
                   std::size_t true_class) {
  if (class_scores.size() < 2) {
    throw std::invalid_argument("metric_loss: need at least two classes");
  }
  if (true_class >= class_scores.size()) {
    throw std::invalid_argument("metric_loss: true class out of range");
  }
  return cross_entropy(class_scores, true_class);
}

double classifier_loss(std::span<const double> embedding,
                       const ClassifierParams& p, std::size_t true_class) {
  if (true_class >= p.classes) {
    throw std::invalid_argument("classifier_loss: class out of range");
  }
  const std::vector<double> logits = classifier_logits(embedding, p);
  return cross_entropy(logits, true_class);
}

double total_loss(double l1, double l2, double beta) { return beta * l1 + l2; }

double EpisodeTrace::mean_l1() const {
  double s = 0.0;
  for (const QueryTrace& q : queries) s += q.l1;
  return queries.empty() ? 0.0 : s / static_cast<double>(queries.size());
}

double EpisodeTrace::mean_l2() const {
  double s = 0.0;
  for (const QueryTrace& q : queries) s += q.l2;
  return queries.empty() ? 0.0 : s / static_cast<double>(queries.size());
}

double EpisodeTrace::mean_total() const {
  double s = 0.0;
  for (const QueryTrace& q : queries) s += q.total;
  return queries.empty() ? 0.0 : s / static_cast<double>(queries.size());
}

double EpisodeTrace::accuracy() const {
  std::size_t correct = 0;
  for (const QueryTrace& q : queries) {
    if (argmax_lowest(q.class_scores) == q.true_way) ++correct;
  }
  return queries.empty() ? 0.0
                         : static_cast<double>(correct) /
                               static_cast<double>(queries.size());
}

EpisodeTrace forward_episode(const PooledBank& bank, const Episode& episode,
                             const MatcherParams& matcher,
                             const ClassifierParams& classifier,
                             const Hyperparams& hp) {
  const PairConfig config = hp.pair_config();
  EpisodeTrace trace;
  trace.beta = hp.beta;
  trace.alpha = hp.alpha;
  for (std::size_t way = 0; way < episode.query.size(); ++way) {
    for (std::size_t q : episode.query[way]) {
      QueryTrace qt;
      qt.true_way = way;
      qt.true_label = bank.label(q);
      for (const auto& shots : episode.support) {
        std::vector<PairTrace> per_shot;
        std::vector<double> scores;
        for (std::size_t s : shots) {
          per_shot.push_back(trace_pair(bank.image(s), bank.image(q),
                                        bank.layer_ids(), &matcher, config));
          scores.push_back(per_shot.back().breakdown.combined);
        }
        qt.class_scores.push_back(class_score(scores, shots.size()));
        qt.pairs.push_back(std::move(per_shot));
      }
      qt.l1 = metric_loss(qt.class_scores, way);
      qt.embedding = mean_embedding(bank.image(q).back());
      qt.probs = softmax(classifier_logits(qt.embedding, classifier));
      qt.l2 = classifier_loss(qt.embedding, classifier, qt.true_label);
      qt.total = total_loss(qt.l1, qt.l2, hp.beta);
      trace.queries.push_back(std::move(qt));
    }
  }
  return trace;
}

Gradients backward(const EpisodeTrace& trace, const MatcherParams& matcher,
                   const ClassifierParams& classifier) {
  Gradients g{zeros_like(matcher),
              ClassifierParams::zeros(classifier.classes, classifier.channels)};
  if (trace.queries.empty()) return g;
  const double per_query = 1.0 / static_cast<double>(trace.queries.size());
  std::vector<double> ga, gb;

  for (const QueryTrace& qt : trace.queries) {
    if (qt.pairs.size() != qt.class_scores.size() ||
        qt.probs.size() != classifier.classes ||
        qt.embedding.size() != classifier.channels) {
      throw std::logic_error("backward: trace is missing intermediates");
    }
    // beta * L1 through the class scores.
    const std::vector<double> p = softmax(qt.class_scores);
    for (std::size_t way = 0; way < qt.pairs.size(); ++way) {
      const double d_class =
          per_query * trace.beta * (p[way] - (way == qt.true_way ? 1.0 : 0.0));
      const auto& shots = qt.pairs[way];
      for (const PairTrace& pt : shots) {
        const double d_critical =
            d_class / static_cast<double>(shots.size()) * trace.alpha;
        if (d_critical == 0.0) continue;
        const LayerTrace& lt = pt.layers.at(pt.max_layer);
        if (!lt.matcher_applied) {
          throw std::logic_error("backward: pair traced without a matcher");
        }
        const LayerMatcher* params = matcher.find(lt.layer_id);
        LayerMatcher* grad = g.matcher.find(lt.layer_id);
        if (params == nullptr || grad == nullptr) {
          throw std::logic_error("backward: no matcher for traced layer");
        }
        for (std::size_t r : lt.critical.top_rows) {
          auto a = lt.support_out.row(r);
          auto b = lt.query_out.row(r);
          cosine_grad(a, b, d_critical, ga);
          cosine_grad(b, a, d_critical, gb);
          matcher_row_backward(lt.support.row(r), *params,
                               lt.support_activations, r, ga, *grad);
          matcher_row_backward(lt.query.row(r), *params, lt.query_activations,
                               r, gb, *grad);
        }
      }
    }
    // L2 through the classifier logits.
    for (std::size_t k = 0; k < classifier.classes; ++k) {
      const double d_logit =
          per_query * (qt.probs[k] - (k == qt.true_label ? 1.0 : 0.0));
      g.classifier.b[k] += d_logit;
      for (std::size_t i = 0; i < classifier.channels; ++i) {
        g.classifier.w[k * classifier.channels + i] += d_logit * qt.embedding[i];
      }
    }
  }
  return g;
}

double selection_margin(const EpisodeTrace& trace) {
  double margin = std::numeric_limits<double>::infinity();
  for (const QueryTrace& qt : trace.queries) {
    for (const auto& shots : qt.pairs) {
      for (const PairTrace& pt : shots) {
        for (const LayerTrace& lt : pt.layers) {
          const auto& sel = lt.critical;
          const std::size_t k = sel.top_rows.size();
          if (k < sel.cosines.size()) {
            double outside = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < sel.cosines.size(); ++r) {
              if (std::find(sel.top_rows.begin(), sel.top_rows.end(), r) ==
                  sel.top_rows.end()) {
                outside = std::max(outside, sel.cosines[r]);
              }
            }
            margin = std::min(margin, sel.cosines[sel.top_rows.back()] - outside);
          }
        }
        const auto& scores = pt.breakdown.layers;
        for (std::size_t l = 0; l < scores.size(); ++l) {
          if (l == pt.max_layer) continue;
          margin = std::min(margin,
                            scores[pt.max_layer].critical - scores[l].critical);
        }
        const LayerTrace& top = pt.layers[pt.max_layer];
        if (!top.matcher_applied) continue;
        for (std::size_t r : top.critical.top_rows) {
          for (const MatcherActivations* act :
               {&top.support_activations, &top.query_activations}) {
            for (std::size_t k = 0; k < act->hidden_pre.cols(); ++k) {
              margin = std::min(margin, std::abs(act->hidden_pre(r, k)));
            }
            for (std::size_t j = 0; j < act->out_pre.cols(); ++j) {
              margin = std::min(margin, std::abs(act->out_pre(r, j)));
            }
          }
        }
      }
    }
  }
  return margin;
}

MatcherParams sgd_step(MatcherParams params, const MatcherParams& grads,
                       double lr) {
  if (params.layers.size() != grads.layers.size()) {
    throw std::invalid_argument("sgd_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LayerMatcher& p = params.layers[l];
    const LayerMatcher& g = grads.layers[l];
    if (p.layer_id != g.layer_id || p.channels != g.channels) {
      throw std::invalid_argument("sgd_step: layer shape mismatch");
    }
    axpy(p.w1, g.w1, lr);
    axpy(p.b1, g.b1, lr);
    axpy(p.w2, g.w2, lr);
    axpy(p.b2, g.b2, lr);
  }
  return params;
}

ClassifierParams sgd_step(ClassifierParams params,
                          const ClassifierParams& grads, double lr) {
  if (params.classes != grads.classes || params.channels != grads.channels) {
    throw std::invalid_argument("sgd_step: classifier shape mismatch");
  }
  axpy(params.w, grads.w, lr);
  axpy(params.b, grads.b, lr);
  return params;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  double lr = cfg.learning_rate;
  for (int d : cfg.decay_epochs) {
    if (d <= epoch) lr *= cfg.decay_factor;
  }
  return lr;
}

TrainResult train(const FeatureBank& bank, const Hyperparams& hp,
                  const TrainConfig& cfg) {
  hp.validate();
  cfg.validate();
  const PooledBank pooled(bank, hp.layer_ids, hp.pooled);

  std::vector<LayerChannels> channels;
  for (std::uint32_t id : hp.layer_ids) {
    channels.push_back({id, bank.layers[bank.layer_index(id)].dims.c});
  }
  TrainResult result;
  result.matcher = init_matcher(channels, cfg.seed);
  result.classifier =
      ClassifierParams::zeros(bank.class_count, channels.back().channels);

  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log{epoch, lr_at(epoch, cfg), 0.0, 0.0, 0.0, 0.0};
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e, ++step) {
      auto rng = episode_rng(cfg.seed, step);
      const Episode ep = sample_episode(bank, hp, rng);
      const EpisodeTrace trace =
          forward_episode(pooled, ep, result.matcher, result.classifier, hp);
      const Gradients g = backward(trace, result.matcher, result.classifier);
      result.matcher = sgd_step(std::move(result.matcher), g.matcher, log.lr);
      result.classifier =
          sgd_step(std::move(result.classifier), g.classifier, log.lr);
      log.mean_l1 += trace.mean_l1();
      log.mean_l2 += trace.mean_l2();
      log.mean_total += trace.mean_total();
      log.accuracy += trace.accuracy();
    }
    if (cfg.episodes_per_epoch > 0) {
      const double n = static_cast<double>(cfg.episodes_per_epoch);
      log.mean_l1 /= n;
      log.mean_l2 /= n;
      log.mean_total /= n;
      log.accuracy /= n;
    }
    result.log.push_back(log);
  }
  return result;
}

void write_train_log(std::span<const EpochLog> log,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << std::setprecision(10);
  out << "epoch,lr,mean_l1,mean_l2,mean_total,train_accuracy\n";
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.mean_l1 << ',' << e.mean_l2
        << ',' << e.mean_total << ',' << e.accuracy << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lwfm
