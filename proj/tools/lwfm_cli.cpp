// Command-line front end: synthetic bank generation, episodic evaluation,
// training, single-pair scoring and the assignment micro-benchmark.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lwfm/bench.hpp"
#include "lwfm/episode.hpp"
#include "lwfm/errors.hpp"
#include "lwfm/feature_bank.hpp"
#include "lwfm/scoring.hpp"
#include "lwfm/training.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct EvalFlags {
  std::string bank;
  std::string params = "none";
  std::string preset;
  std::string assign = "hungarian";
  std::string report;
  lwfm::Hyperparams hp;
  CLI::Option* alpha = nullptr;
  CLI::Option* beta = nullptr;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f, bool episodes_flag = true) {
  cmd->add_option("--bank", f.bank, "FBNK1 feature bank")->required();
  cmd->add_option("--params", f.params, "MPAR matcher parameters or 'none'")
      ->capture_default_str();
  cmd->add_option("--preset", f.preset,
                  "miniImageNet | tieredImageNet | CIFAR-FS | CUB-200-2011");
  cmd->add_option("--n-way", f.hp.n_way)->capture_default_str();
  cmd->add_option("--k-shot", f.hp.k_shot)->capture_default_str();
  cmd->add_option("--queries", f.hp.query_per_class)->capture_default_str();
  if (episodes_flag) {
    cmd->add_option("--episodes", f.hp.episode_count)->capture_default_str();
  }
  cmd->add_option("--seed", f.hp.seed)->capture_default_str();
  f.alpha = cmd->add_option("--alpha", f.hp.alpha)->capture_default_str();
  f.beta = cmd->add_option("--beta", f.hp.beta)->capture_default_str();
  cmd->add_option("--temperature", f.hp.temperature)->capture_default_str();
  cmd->add_option("--k-top", f.hp.k_top)->capture_default_str();
  cmd->add_option("--pooled", f.hp.pooled)->capture_default_str();
  cmd->add_option("--layers", f.hp.layer_ids)
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--assign", f.assign)
      ->check(CLI::IsMember({"hungarian", "nn"}))
      ->capture_default_str();
  cmd->add_option("--report", f.report, "report path (.csv or .json)");
  cmd->add_option("--threads", f.hp.threads, "evaluation workers")
      ->capture_default_str();
}

// Applies --preset and --assign; explicit --alpha/--beta win over a preset.
const lwfm::Preset* finish_eval_flags(EvalFlags& f) {
  f.hp.assign = f.assign == "nn" ? lwfm::AssignMethod::kNearestNeighbor
                                 : lwfm::AssignMethod::kHungarian;
  if (f.preset.empty()) return nullptr;
  const lwfm::Preset& p = lwfm::find_preset(f.preset);
  if (f.alpha->count() == 0) f.hp.alpha = p.alpha;
  if (f.beta->count() == 0) f.hp.beta = p.beta;
  return &p;
}

std::optional<lwfm::MatcherParams> load_params(const std::string& path) {
  if (path.empty() || path == "none") return std::nullopt;
  return lwfm::read_matcher(path);
}

int run_eval(EvalFlags& f) {
  finish_eval_flags(f);
  const lwfm::FeatureBank bank = lwfm::read_bank(f.bank);
  const auto params = load_params(f.params);
  const lwfm::EvalReport report =
      lwfm::evaluate(bank, params ? &*params : nullptr, f.hp);
  if (!f.report.empty()) lwfm::write_report(report, f.report);
  std::cout << "episodes " << report.accuracies.size() << "  accuracy "
            << report.mean << " +- " << report.ci95 << '\n';
  return 0;
}

struct TrainFlags {
  std::string out_params;
  std::string log;
  lwfm::TrainConfig cfg;
  CLI::Option* epochs = nullptr;
  CLI::Option* decay_epochs = nullptr;
};

int run_train(EvalFlags& f, TrainFlags& t) {
  const lwfm::Preset* preset = finish_eval_flags(f);
  if (preset != nullptr) {
    if (t.epochs->count() == 0) t.cfg.epochs = preset->epochs;
    if (t.decay_epochs->count() == 0) t.cfg.decay_epochs = preset->decay_epochs;
  }
  t.cfg.beta = f.hp.beta;
  t.cfg.seed = f.hp.seed;
  t.cfg.episodes_per_epoch = f.hp.episode_count;
  const lwfm::FeatureBank bank = lwfm::read_bank(f.bank);
  const lwfm::TrainResult result = lwfm::train(bank, f.hp, t.cfg);
  lwfm::write_matcher(result.matcher, t.out_params);
  if (!t.log.empty()) lwfm::write_train_log(result.log, t.log);
  std::cout << "epoch,lr,mean_l1,mean_l2,mean_total,train_accuracy\n";
  for (const lwfm::EpochLog& e : result.log) {
    std::cout << e.epoch << ',' << e.lr << ',' << e.mean_l1 << ','
              << e.mean_l2 << ',' << e.mean_total << ',' << e.accuracy << '\n';
  }
  return 0;
}

int run_score_pair(EvalFlags& f, std::size_t support_idx,
                   std::size_t query_idx) {
  finish_eval_flags(f);
  f.hp.validate();
  const lwfm::FeatureBank bank = lwfm::read_bank(f.bank);
  if (support_idx >= bank.image_count() || query_idx >= bank.image_count()) {
    throw lwfm::ConfigError("image index out of range (bank holds " +
                            std::to_string(bank.image_count()) + " images)");
  }
  const auto params = load_params(f.params);
  const lwfm::PooledBank pooled(bank, f.hp.layer_ids, f.hp.pooled);
  const lwfm::ScoreBreakdown b = lwfm::score_pair(
      pooled.image(support_idx), pooled.image(query_idx), pooled.layer_ids(),
      params ? &*params : nullptr, f.hp.pair_config());
  nlohmann::json j;
  j["support_idx"] = support_idx;
  j["query_idx"] = query_idx;
  j["support_label"] = bank.labels[support_idx];
  j["query_label"] = bank.labels[query_idx];
  j["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    j["layers"].push_back({{"layer_id", b.layer_ids[l]},
                           {"critical", b.layers[l].critical},
                           {"global", b.layers[l].global}});
  }
  j["alpha"] = f.hp.alpha;
  j["combined"] = b.combined;
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise feature metric with semantic-pixel matching"};
  app.require_subcommand(1);

  EvalFlags eval_flags;
  CLI::App* eval = app.add_subcommand("eval", "episodic evaluation");
  add_eval_flags(eval, eval_flags);

  EvalFlags train_flags;
  train_flags.hp.episode_count = 100;
  TrainFlags train_opts;
  CLI::App* train = app.add_subcommand("train", "episodic matcher training");
  add_eval_flags(train, train_flags, false);
  train->add_option("--episodes", train_flags.hp.episode_count,
                    "episodes per epoch")
      ->capture_default_str();
  train->add_option("--out-params", train_opts.out_params)->required();
  train->add_option("--log", train_opts.log, "per-epoch CSV log");
  train_opts.epochs =
      train->add_option("--epochs", train_opts.cfg.epochs)->capture_default_str();
  train->add_option("--lr", train_opts.cfg.learning_rate)->capture_default_str();
  train->add_option("--decay", train_opts.cfg.decay_factor)
      ->capture_default_str();
  train_opts.decay_epochs =
      train->add_option("--decay-epochs", train_opts.cfg.decay_epochs)
          ->delimiter(',')
          ->capture_default_str();

  EvalFlags pair_flags;
  std::size_t support_idx = 0, query_idx = 0;
  CLI::App* score = app.add_subcommand("score-pair", "score one image pair");
  add_eval_flags(score, pair_flags, false);
  score->add_option("--support-idx", support_idx)->required();
  score->add_option("--query-idx", query_idx)->required();

  lwfm::SyntheticSpec synth;
  std::string synth_layers = "7:3x3x256,8:3x3x512";
  std::string synth_out;
  CLI::App* gen = app.add_subcommand("gen-synthetic", "write a synthetic bank");
  gen->add_option("--classes", synth.class_count)->capture_default_str();
  gen->add_option("--per-class", synth.images_per_class)->capture_default_str();
  gen->add_option("--layers", synth_layers)->capture_default_str();
  gen->add_option("--prototype-scale", synth.prototype_scale)
      ->capture_default_str();
  gen->add_option("--noise-scale", synth.noise_scale)->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--out", synth_out)->required();

  std::vector<std::size_t> bench_sizes{3, 4, 6, 9, 12};
  std::size_t bench_trials = 100;
  std::uint64_t bench_seed = 42;
  CLI::App* bench =
      app.add_subcommand("bench-assign", "time the assignment solver");
  bench->add_option("--sizes", bench_sizes, "pooled sides d (n = d^2)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--trials", bench_trials)->capture_default_str();
  bench->add_option("--seed", bench_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*eval) return run_eval(eval_flags);
    if (*train) return run_train(train_flags, train_opts);
    if (*score) return run_score_pair(pair_flags, support_idx, query_idx);
    if (*gen) {
      synth.layers = lwfm::parse_layer_dims(synth_layers);
      lwfm::write_bank(lwfm::gen_synthetic_bank(synth), synth_out);
      std::cout << "wrote " << synth.class_count * synth.images_per_class
                << " images to " << synth_out << '\n';
      return 0;
    }
    if (*bench) {
      const auto rows = lwfm::bench_assign(bench_sizes, bench_trials, bench_seed);
      std::cout << "d,n,mean_seconds\n";
      for (const lwfm::BenchRow& r : rows) {
        std::cout << r.side << ',' << r.n << ',' << r.mean_seconds << '\n';
      }
      if (rows.size() >= 2) {
        std::cerr << "log-log slope in n: " << lwfm::loglog_slope(rows) << '\n';
      }
      return 0;
    }
  } catch (const lwfm::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const lwfm::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const lwfm::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const lwfm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
