#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gustuq/evidential.hpp"

namespace gustuq::cli {

/// Flat run configuration. Every field has a key of the same name in the
/// JSON config file and a matching `--flag` (underscores become dashes).
struct RunConfig {
  std::string command;

  std::filesystem::path data;         // input table (features, targets or observations)
  std::filesystem::path model;        // model artifact
  std::filesystem::path out;          // output directory
  std::filesystem::path predictions;  // predictions table (evaluate, spatial)

  std::vector<std::string> features;  // custom feature columns; empty: derived feature set
  std::string layout = "station";     // predict input layout: station or grid

  std::optional<std::size_t> train_storms;
  std::optional<std::size_t> val_storms;
  std::optional<std::size_t> test_storms;

  evidential::TrainConfig train;  // seed is taken from `seed`

  std::vector<double> levels{0.70, 0.90, 0.95, 0.99};
  double mask_percentile = 95.0;
  bool exclude_flagged = true;

  std::size_t shuffles = 10;
  std::size_t pdp_grid = 100;
  std::vector<std::string> pdp_features;  // empty: all features

  std::size_t align_k = 1;

  std::size_t trials = 500;
  double tune_weight = 0.5;

  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

/// Keys accepted in config files and (dash-separated) on the command line.
const std::vector<std::string>& config_keys();

/// Applies one textual setting. Lists are comma-separated. Throws
/// ConfigError for an unknown key or an unparsable value.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Applies every entry of a JSON object. Arrays become comma lists.
void apply_config_json(RunConfig& config, const std::string& json_text);

/// Defaults, then the config file (if any), then explicit flags.
RunConfig resolve(const std::string& command, const std::optional<std::filesystem::path>& config_file,
                  const std::map<std::string, std::string>& flags);

/// Throws UsageError when a required path is empty or missing.
void check_inputs(const RunConfig& config);

void cmd_train(const RunConfig& config);
void cmd_predict(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_explain(const RunConfig& config);
void cmd_spatial(const RunConfig& config);
void cmd_tune(const RunConfig& config);

/// Parses arguments and dispatches. Prints "error: <Kind>: <message>" to
/// stderr and returns nonzero on failure.
int run(int argc, const char* const* argv);

}  // namespace gustuq::cli
