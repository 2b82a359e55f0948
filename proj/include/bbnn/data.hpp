#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bbnn/ndmath.hpp"

namespace bbnn {

/// How to read one delimited file.
struct CsvSchema {
  std::string label_column;
  /// Ordered label vocabulary; class index = position. Empty means "sorted
  /// distinct values seen in the file".
  std::vector<std::string> label_values;
  /// Cells equal to one of these are missing, in every column.
  std::vector<std::string> missing_markers = {"?", ""};
  /// Extra per-column markers (e.g. "0" for an unmeasured glucose level).
  std::map<std::string, std::vector<std::string>> column_missing_markers;
  /// Columns holding category codes; one-hot encoded during preprocessing.
  std::vector<std::string> categorical_columns;
  std::vector<std::string> drop_columns;
  char delimiter = ',';
};

struct RawColumn {
  std::string name;
  bool categorical = false;
  std::vector<double> numeric;     // NaN where missing (numeric columns)
  std::vector<std::string> text;   // raw cell text (categorical columns)
  std::vector<bool> missing;
};

struct RawTable {
  std::vector<RawColumn> columns;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;
  std::size_t rows() const noexcept { return labels.size(); }
};

/// Throws ConfigError with the 1-based line number on ragged or non-numeric
/// rows, on unknown label values, and with "empty dataset" when no data rows
/// follow the header.
RawTable load_csv(const std::filesystem::path& path, const CsvSchema& schema);
RawTable parse_csv(const std::string& text, const CsvSchema& schema);

/// Normalised, imputed feature matrix plus the manifest that produced it.
struct Dataset {
  std::string name;
  Matrix features;
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  nlohmann::json manifest;
};

/// Median imputation, binary {0,1} mapping, one-hot encoding of categorical
/// columns and z-scoring of the remaining numeric columns. Every statistic
/// comes from `fit_indices` only.
Dataset preprocess(const RawTable& raw, std::span<const std::size_t> fit_indices,
                   const std::string& name = "");

/// Re-applies a manifest to (possibly new) raw rows.
Matrix apply_manifest(const RawTable& raw, const nlohmann::json& manifest);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.70, 0.15, 0.15};
};

/// Stratified three-way split. Part sizes are the largest-remainder
/// apportionment of N (ties to the earlier part); each class contributes
/// floor(n_c * ratio) or one more to every part. Members are drawn after a
/// seeded shuffle. Index lists are sorted ascending.
Split stratified_split(std::span<const int> labels, std::size_t class_count,
                       std::array<double, 3> ratios, std::uint64_t seed);
Split stratified_split(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed);

/// Stratified k folds. Fold i tests on fold i, validates on fold (i+1) mod k
/// and trains on the rest.
std::vector<Split> stratified_kfold(std::span<const int> labels, std::size_t class_count,
                                    std::size_t k, std::uint64_t seed);

/// Largest-remainder apportionment of `total` across `ratios`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> ratios);

/// Built-in schemas for the five medical benchmarks.
struct DatasetInfo {
  std::string name;
  std::string file_name;
  std::string display_name;
  CsvSchema schema;
  std::size_t expected_rows = 0;
};

const std::vector<DatasetInfo>& dataset_registry();
/// Throws ConfigError listing the known names.
const DatasetInfo& find_dataset(const std::string& name);

/// Loads a registered dataset and appends a warning when the row count
/// differs from the reference count.
RawTable load_registered(const DatasetInfo& info, const std::filesystem::path& path);

}  // namespace bbnn
