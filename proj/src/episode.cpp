#include "lwfm/episode.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lwfm/errors.hpp"

namespace lwfm {

void Hyperparams::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be > 0");
  }
  if (pooled < 1) throw ConfigError("pooled must be >= 1");
  if (pooled > 1 && (k_top < 1 || k_top > pooled * pooled)) {
    throw ConfigError("k_top " + std::to_string(k_top) + " outside [1, " +
                      std::to_string(pooled * pooled) + "]");
  }
  if (n_way < 2) throw ConfigError("n_way must be >= 2");
  if (k_shot < 1) throw ConfigError("k_shot must be >= 1");
  if (layer_ids.empty()) throw ConfigError("no layers selected");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ConfigError("alpha and beta must be finite");
  }
}

PairConfig Hyperparams::pair_config() const {
  return {temperature, alpha, pooled == 1 ? 1 : k_top, pooled, assign};
}

std::span<const Preset> presets() {
  static const std::vector<Preset> kPresets = {
      {"miniImageNet", 0.25, 0.25, 10, {4, 6, 8}},
      {"tieredImageNet", 0.25, 0.25, 10, {4, 6, 8}},
      {"CIFAR-FS", 1.0, 0.5, 10, {4, 6, 8}},
      {"CUB-200-2011", 1.0, 1.5, 30, {20, 24, 26, 28}},
  };
  return kPresets;
}

const Preset& find_preset(const std::string& name) {
  auto lower = [](std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(ch));
    return s;
  };
  for (const Preset& p : presets()) {
    if (lower(p.name) == lower(name)) return p;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Episode sample_episode(const FeatureBank& bank, const Hyperparams& hp,
                       std::mt19937_64& rng) {
  const std::size_t need = hp.k_shot + hp.query_per_class;
  auto by_class = bank.images_by_class();
  std::vector<std::uint32_t> eligible;
  for (std::uint32_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].size() >= need) eligible.push_back(k);
  }
  if (eligible.size() < hp.n_way) {
    throw ConfigError("episode needs " + std::to_string(hp.n_way) +
                      " classes with >= " + std::to_string(need) +
                      " images each, bank has " +
                      std::to_string(eligible.size()) + " (short by " +
                      std::to_string(hp.n_way - eligible.size()) + ")");
  }

  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  auto draw = [&rng](auto& pool, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
  };

  Episode ep;
  draw(eligible, hp.n_way);
  ep.classes.assign(eligible.begin(), eligible.begin() + hp.n_way);
  for (std::uint32_t k : ep.classes) {
    std::vector<std::size_t>& images = by_class[k];
    draw(images, need);
    ep.support.emplace_back(images.begin(), images.begin() + hp.k_shot);
    ep.query.emplace_back(images.begin() + hp.k_shot,
                          images.begin() + need);
  }
  return ep;
}

PooledBank::PooledBank(const FeatureBank& bank,
                       std::span<const std::uint32_t> layer_ids,
                       std::size_t pooled)
    : layer_ids_(layer_ids.begin(), layer_ids.end()),
      maps_(bank.image_count()),
      labels_(bank.labels),
      class_count_(bank.class_count) {
  for (std::uint32_t id : layer_ids_) {
    const BankLayer& layer = bank.layers[bank.layer_index(id)];
    if (pooled > layer.dims.h || pooled > layer.dims.w) {
      throw ConfigError("layer " + std::to_string(id) + " maps are " +
                        std::to_string(layer.dims.h) + "x" +
                        std::to_string(layer.dims.w) +
                        ", smaller than pooled size " +
                        std::to_string(pooled));
    }
    for (std::size_t i = 0; i < maps_.size(); ++i) {
      maps_[i].push_back(adaptive_avg_pool(layer.maps[i], pooled, pooled));
    }
  }
}

std::size_t argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

Classification classify_query(const PooledBank& bank, std::size_t query_image,
                              const Episode& episode,
                              const MatcherParams* matcher,
                              const Hyperparams& hp) {
  const PairConfig config = hp.pair_config();
  Classification out;
  std::vector<double> pair_scores;
  for (const auto& shots : episode.support) {
    pair_scores.clear();
    for (std::size_t s : shots) {
      pair_scores.push_back(score_pair(bank.image(s), bank.image(query_image),
                                       bank.layer_ids(), matcher, config)
                                .combined);
    }
    out.scores.push_back(class_score(pair_scores, shots.size()));
  }
  out.predicted = argmax_lowest(out.scores);
  return out;
}

void summarize(EvalReport& report) {
  const std::size_t e = report.accuracies.size();
  if (e == 0) {
    report.mean = report.ci95 = 0.0;
    return;
  }
  double sum = 0.0;
  for (double a : report.accuracies) sum += a;
  report.mean = sum / static_cast<double>(e);
  double sq = 0.0;
  for (double a : report.accuracies) sq += (a - report.mean) * (a - report.mean);
  const double stddev = std::sqrt(sq / static_cast<double>(e));
  report.ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(e));
}

EvalReport evaluate_with(const FeatureBank& bank, const Hyperparams& hp,
                         const QueryScorer& scorer, bool keep_scores) {
  hp.validate();
  const std::size_t count = hp.episode_count;
  EvalReport report;
  report.accuracies.assign(count, 0.0);
  if (keep_scores) report.scores.resize(count);

  // Fail fast on an impossible configuration before spawning workers.
  {
    auto rng = episode_rng(hp.seed, 0);
    sample_episode(bank, hp, rng);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    try {
      for (std::size_t e = next++; e < count; e = next++) {
        auto rng = episode_rng(hp.seed, e);
        const Episode ep = sample_episode(bank, hp, rng);
        std::size_t correct = 0, total = 0;
        for (std::size_t way = 0; way < ep.query.size(); ++way) {
          for (std::size_t q : ep.query[way]) {
            std::vector<double> scores = scorer(ep, e, q);
            if (argmax_lowest(scores) == way) ++correct;
            ++total;
            if (keep_scores) report.scores[e].push_back(std::move(scores));
          }
        }
        report.accuracies[e] =
            total == 0 ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(total);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = count;
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(hp.threads, count));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  summarize(report);
  return report;
}

EvalReport evaluate(const FeatureBank& bank, const MatcherParams* matcher,
                    const Hyperparams& hp, bool keep_scores) {
  hp.validate();
  const PooledBank pooled(bank, hp.layer_ids, hp.pooled);
  if (matcher != nullptr) {
    for (std::uint32_t id : hp.layer_ids) {
      const LayerMatcher* m = matcher->find(id);
      if (m == nullptr) {
        throw ConfigError("matcher parameters lack layer " + std::to_string(id));
      }
      if (m->channels != bank.layers[bank.layer_index(id)].dims.c) {
        throw ConfigError("matcher layer " + std::to_string(id) +
                          " channel count differs from the bank");
      }
    }
  }
  QueryScorer scorer = [&](const Episode& ep, std::uint64_t, std::size_t q) {
    return classify_query(pooled, q, ep, matcher, hp).scores;
  };
  return evaluate_with(bank, hp, scorer, keep_scores);
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (path.extension() == ".json") {
    nlohmann::json j;
    j["episodes"] = report.accuracies.size();
    j["accuracies"] = report.accuracies;
    j["mean"] = report.mean;
    j["ci95"] = report.ci95;
    if (!report.scores.empty()) j["scores"] = report.scores;
    out << j.dump(2) << '\n';
  } else {
    out << std::setprecision(17);
    out << "episode,accuracy\n";
    for (std::size_t e = 0; e < report.accuracies.size(); ++e) {
      out << e << ',' << report.accuracies[e] << '\n';
    }
    out << "mean," << report.mean << '\n';
    out << "ci95," << report.ci95 << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lwfm
