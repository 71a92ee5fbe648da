#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "analysis.hpp"
#include "baselines.hpp"
#include "dataset.hpp"
#include "neighbors.hpp"
#include "search.hpp"

namespace mixr {

using nlohmann::json;

struct DatasetSource {
  std::optional<std::filesystem::path> csv;
  std::optional<std::filesystem::path> train_csv;
  std::optional<std::filesystem::path> val_csv;
  std::optional<std::filesystem::path> test_csv;
  std::vector<std::string> labels;
  std::optional<SyntheticSpec> synthetic;
};

struct AnalysisConfig {
  std::vector<DistanceBand> bands = uniform_bands(5);
  std::size_t pair_cap = kBandPairCap;
  bool label_error = true;
  bool band_study = true;
  bool histogram = true;
  std::optional<std::filesystem::path> model;
};

struct RunConfig {
  DatasetSource dataset;
  std::optional<SplitSpec> split;
  bool standardize_features = true;
  bool standardize_labels = false;
  RegressionSetup regression;
  SeriesSpec series = ExponentialSeries{};
  std::optional<std::vector<std::size_t>> option_values;
  MixConfig mix;
  SearchConfig search;
  std::vector<MethodSpec> methods;
  AnalysisConfig analysis;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::optional<std::filesystem::path> policy;
};

// Values given on the command line; each replaces the matching config key.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::vector<std::string> methods;
  std::optional<std::filesystem::path> policy;
};

// Reads a config file. A run manifest is accepted too; its embedded config
// is returned so that a finished run can be replayed.
json load_config_document(const std::filesystem::path& path);

// Validates and resolves a config document. Errors name the offending field
// path, e.g. "search.clip".
RunConfig parse_run_config(const json& doc, const RunOverrides& overrides = {});
json to_json(const RunConfig& cfg);

// Train/validation/test sets after splitting and standardization. raw_train
// keeps the training rows in their original units.
struct PreparedData {
  Dataset raw_train;
  Dataset train;
  std::optional<Dataset> val;
  std::optional<Dataset> test;
};
PreparedData prepare_data(const RunConfig& cfg);

KnnOptions resolve_options(const RunConfig& cfg, std::size_t train_size);

void write_policy_csv(const MixPolicy& policy, const std::vector<double>& probability,
                      const std::filesystem::path& path);
// Options default to {0} U the k values present in the file.
MixPolicy read_policy_csv(const std::filesystem::path& path,
                          const std::optional<KnnOptions>& options = std::nullopt);

std::string render_results_table(const std::vector<MethodResult>& results);

struct CommandOutcome {
  bool complete = true;
  std::vector<std::string> failures;  // "method: message"
  std::map<std::string, std::string> artifacts;
};

CommandOutcome cmd_search(const RunConfig& cfg, const std::filesystem::path& out);
CommandOutcome cmd_compare(const RunConfig& cfg, const std::filesystem::path& out);
CommandOutcome cmd_augment(const RunConfig& cfg, const std::filesystem::path& out);
CommandOutcome cmd_analyze(const RunConfig& cfg, const std::filesystem::path& out);
CommandOutcome cmd_gen_synthetic(const RunConfig& cfg, const std::filesystem::path& out);

// Dispatches by subcommand name and writes manifest.json into `out`.
CommandOutcome run_command(const std::string& command, const json& doc,
                           const RunOverrides& overrides, const std::filesystem::path& out);

}  // namespace mixr
