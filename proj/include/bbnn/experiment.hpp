#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bbnn/bbb.hpp"
#include "bbnn/bvi.hpp"
#include "bbnn/classical.hpp"

namespace bbnn {

inline constexpr const char* kSoftwareVersion = "0.1.0";

struct ToyConfig {
  std::string target = "bimodal";
  BoostConfig boost;
};

struct ExperimentConfig {
  std::string dataset;                 // registry name
  std::filesystem::path dataset_path;  // empty: resolve through data_dir
  std::filesystem::path data_dir;      // empty: $BBNN_DATA_DIR, then ./data
  std::vector<std::string> datasets;   // reproduce-tables; empty means all
  std::string method = "vi";           // classical | vi | bbnn
  std::vector<std::string> methods = {"classical", "vi", "bbnn"};
  std::vector<std::size_t> hidden = {32};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::filesystem::path out_dir = "runs";
  std::array<double, 3> ratios{0.70, 0.15, 0.15};
  std::size_t kfold = 0;  // 0: single stratified split
  std::size_t fold = 0;
  std::size_t ece_bins = 10;
  std::size_t eval_samples = 100;
  int threads = 1;
  std::size_t repetitions = 3;  // bench
  ClassicalConfig classical;
  BbbConfig vi;
  BoostConfig bbnn;
  ToyConfig toy;
};

/// Sectioned key=value text. Every problem is collected and reported in one
/// ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Throws ConfigError listing every invalid setting.
void validate(const ExperimentConfig& cfg);

std::filesystem::path resolve_dataset_path(const ExperimentConfig& cfg, const std::string& name);

/// One (dataset, method, seed) run.
struct RunReport {
  nlohmann::json json;
  std::filesystem::path dir;
  double train_seconds = 0.0;
  double inference_seconds = 0.0;
};

/// Trains, evaluates val/test parts and writes report.json, checkpoint.json,
/// traces and prediction dumps into `dir`.
RunReport run_experiment(const ExperimentConfig& cfg, const std::string& dataset,
                         const std::string& method, std::uint64_t seed,
                         const std::filesystem::path& dir);

/// Every configured seed for cfg.dataset / cfg.method.
std::vector<RunReport> cmd_train(const ExperimentConfig& cfg);

/// Re-evaluates a checkpoint on its recorded split.
RunReport cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& dir);

struct TablesResult {
  std::filesystem::path accuracy_csv, uncertainty_csv, timing_csv;
  nlohmann::json cells;  // dataset -> method -> per-seed metrics, or "absent"
};
TablesResult cmd_reproduce_tables(const ExperimentConfig& cfg);

struct ToyResult {
  std::vector<double> kl;  // quadrature KL per density file
  std::vector<std::filesystem::path> density_files;
  BoostResult boost;
};
ToyResult cmd_boost_toy(const ToyConfig& cfg, const std::filesystem::path& out_dir);

nlohmann::json cmd_bench(const ExperimentConfig& cfg);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> mismatches;
  std::size_t checked = 0;
};
/// Recomputes every metric of a report from its prediction dumps and
/// demands exact equality.
VerifyResult verify_report(const std::filesystem::path& report_path);

/// Predictions dump `sample_id,label,p_0..p_{K-1}`.
std::string predictions_csv(std::span<const std::size_t> ids, std::span<const int> labels,
                            const Matrix& probs);
/// Per-draw dump `sample_id,draw,weight,p_0..p_{K-1}`.
std::string draws_csv(std::span<const std::size_t> ids, const PredictiveSamples& ps);

/// mean and sample std (divisor n - 1; 0 for a single value).
std::pair<double, double> mean_std(std::span<const double> v);
double median(std::vector<double> v);

}  // namespace bbnn
