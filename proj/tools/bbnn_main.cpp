// bbnn command-line driver. Exit codes: 0 ok, 1 configuration/input error,
// 2 runtime or numerical failure.
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "bbnn/errors.hpp"
#include "bbnn/experiment.hpp"
#include "bbnn/io.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string dataset, dataset_path, data_dir, method, out;
  std::vector<std::string> datasets, methods;
  std::vector<std::uint64_t> seeds;
  std::optional<int> threads;
  std::optional<std::size_t> ece_bins, eval_samples, rounds, repetitions, kfold, fold;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "INI-style experiment config");
  app->add_option("--dataset", o.dataset, "registered dataset name");
  app->add_option("--dataset-path", o.dataset_path, "explicit CSV path for --dataset");
  app->add_option("--data-dir", o.data_dir, "directory holding the dataset CSVs");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--threads", o.threads, "worker threads for predictive sampling");
  app->add_option("--ece-bins", o.ece_bins, "number of calibration bins");
  app->add_option("--eval-samples", o.eval_samples, "posterior draws per prediction");
  app->add_option("--kfold", o.kfold, "k for stratified k-fold (0: single split)");
  app->add_option("--fold", o.fold, "fold index when --kfold is set");
}

bbnn::ExperimentConfig build_config(const Overrides& o) {
  bbnn::ExperimentConfig c = o.config.empty() ? bbnn::ExperimentConfig{} : bbnn::load_config(o.config);
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.dataset_path.empty()) c.dataset_path = o.dataset_path;
  if (!o.data_dir.empty()) c.data_dir = o.data_dir;
  if (!o.method.empty()) c.method = o.method;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.datasets.empty()) c.datasets = o.datasets;
  if (!o.methods.empty()) c.methods = o.methods;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.threads) c.threads = *o.threads;
  if (o.ece_bins) c.ece_bins = *o.ece_bins;
  if (o.eval_samples) c.eval_samples = *o.eval_samples;
  if (o.repetitions) c.repetitions = *o.repetitions;
  if (o.kfold) c.kfold = *o.kfold;
  if (o.fold) c.fold = *o.fold;
  if (o.rounds) {
    c.bbnn.rounds = *o.rounds;
    c.toy.boost.rounds = *o.rounds;
  }
  return c;
}

void print_part(const nlohmann::json& rep) {
  const auto& t = rep.at("parts").at("test");
  std::printf("%s %s seed=%llu  test acc=%.4f nll=%.4f ece=%.4f  train=%.3fs infer=%.4fs\n",
              rep.at("dataset").get<std::string>().c_str(), rep.at("method").get<std::string>().c_str(),
              static_cast<unsigned long long>(rep.at("seed").get<std::uint64_t>()),
              t.at("accuracy").get<double>(), t.at("nll").get<double>(), t.at("ece").get<double>(),
              rep.at("timing").at("train_seconds").is_null() ? 0.0 : rep.at("timing").at("train_seconds").get<double>(),
              rep.at("timing").at("inference_seconds").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural network training with boosted variational inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bbnn::kSoftwareVersion);

  Overrides o;
  std::string checkpoint, target, report;

  auto* train = app.add_subcommand("train", "train one dataset/method for every seed");
  add_common(train, o);
  train->add_option("--method", o.method, "classical | vi | bbnn");
  train->add_option("--seed", o.seeds, "seed(s); overrides the config list");
  train->add_option("--rounds", o.rounds, "boosting rounds for bbnn");

  auto* evaluate = app.add_subcommand("evaluate", "re-evaluate a checkpoint on its recorded split");
  add_common(evaluate, o);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint.json")->required();

  auto* tables = app.add_subcommand("reproduce-tables", "accuracy, uncertainty and timing tables");
  add_common(tables, o);
  tables->add_option("--datasets", o.datasets, "datasets (default: all registered)")->delimiter(',');
  tables->add_option("--methods", o.methods, "methods")->delimiter(',');
  tables->add_option("--seed", o.seeds, "seed(s)");
  tables->add_option("--rounds", o.rounds, "boosting rounds for bbnn");

  auto* toy = app.add_subcommand("boost-toy", "boost a mixture against a 1-D toy target");
  add_common(toy, o);
  toy->add_option("--target", target, "target density name");
  toy->add_option("--rounds", o.rounds, "boosting rounds");
  toy->add_option("--seed", o.seeds, "seed");

  auto* bench = app.add_subcommand("bench", "median train/inference wall-clock over repetitions");
  add_common(bench, o);
  bench->add_option("--datasets", o.datasets, "datasets")->delimiter(',');
  bench->add_option("--methods", o.methods, "methods")->delimiter(',');
  bench->add_option("--repetitions", o.repetitions, "repetitions per cell");
  bench->add_option("--seed", o.seeds, "seed");
  bench->add_option("--rounds", o.rounds, "boosting rounds for bbnn");

  auto* verify = app.add_subcommand("verify-report", "recompute a report's metrics from its dumps");
  verify->add_option("report", report, "report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*verify) {
      const auto r = bbnn::verify_report(report);
      for (const auto& m : r.mismatches) std::printf("MISMATCH %s\n", m.c_str());
      std::printf("%s: %zu values checked, %zu mismatches\n", r.ok ? "OK" : "FAILED", r.checked,
                  r.mismatches.size());
      return r.ok ? 0 : 2;
    }
    bbnn::ExperimentConfig cfg = build_config(o);
    if (*train) {
      for (const auto& r : bbnn::cmd_train(cfg)) print_part(r.json);
    } else if (*evaluate) {
      const std::filesystem::path dir = o.out.empty() ? std::filesystem::path(checkpoint).parent_path() / "evaluate"
                                                      : std::filesystem::path(o.out);
      print_part(bbnn::cmd_evaluate(cfg, checkpoint, dir).json);
    } else if (*tables) {
      const auto r = bbnn::cmd_reproduce_tables(cfg);
      std::cout << bbnn::read_file(r.accuracy_csv) << '\n'
                << bbnn::read_file(r.uncertainty_csv) << '\n'
                << bbnn::read_file(r.timing_csv);
    } else if (*toy) {
      bbnn::validate(cfg);
      bbnn::ToyConfig t = cfg.toy;
      if (!target.empty()) t.target = target;
      if (!o.seeds.empty()) t.boost.seed = o.seeds.front();
      const auto r = bbnn::cmd_boost_toy(t, cfg.out_dir);
      for (std::size_t i = 0; i < r.kl.size(); ++i) std::printf("round %zu  KL(q||p) = %.6f\n", i, r.kl[i]);
    } else if (*bench) {
      std::cout << bbnn::cmd_bench(cfg).dump(2) << '\n';
    }
  } catch (const bbnn::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
