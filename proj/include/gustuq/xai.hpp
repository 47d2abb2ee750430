#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gustuq/evidential.hpp"
#include "gustuq/matrix.hpp"

namespace gustuq::xai {

/// Batch inference: one decomposition per row of the feature matrix.
using Predictor =
    std::function<std::vector<evidential::UncertaintyDecomposition>(const Matrix& features)>;

Predictor make_predictor(const nn::MLPModel& model, std::size_t threads = 1);

/// Returns the row permutation for shuffle number `shuffle` over `n` rows.
/// The default draws a fresh Fisher-Yates permutation from a stream
/// derived from (seed, shuffle), shared by every feature.
using PermutationSource = std::function<std::vector<std::size_t>(std::size_t n, std::size_t shuffle)>;

struct PFIOptions {
  std::size_t n_shuffles = 10;
  std::uint64_t seed = 0;
  std::size_t spread_bins = 20;
  PermutationSource permutation;  // empty: seeded shuffles
};

struct FeatureImportance {
  std::string feature;
  double mean_delta_rmse = 0.0;   // permuted RMSE - baseline RMSE
  double sd_delta_rmse = 0.0;
  double mean_delta_r2 = 0.0;     // baseline R2 - permuted R2 (signed)
  double sd_delta_r2 = 0.0;
  bool constant = false;          // column has a single value; shuffling is a no-op
  std::vector<double> delta_rmse; // per shuffle
  std::vector<double> delta_r2;
};

struct PFIResult {
  double baseline_rmse = 0.0;
  double baseline_r2 = 0.0;
  std::size_t n_shuffles = 0;
  std::vector<FeatureImportance> features;
};

PFIResult permutation_importance(const Predictor& predict, const Matrix& features,
                                 std::span<const double> targets,
                                 const std::vector<std::string>& feature_names,
                                 const PFIOptions& options = {});

struct PDPCurve {
  std::size_t feature = 0;
  std::string name;
  std::vector<double> grid;
  std::vector<double> mean_prediction;
  std::vector<double> sd_prediction;
  std::vector<double> mean_total_sd;
  std::vector<double> sd_total_sd;
};

/// Sweeps `feature` over `n_grid` equally spaced values spanning its
/// observed [min, max], overwriting the column for every row at each value.
PDPCurve partial_dependence(const Predictor& predict, const Matrix& features, std::size_t feature,
                            std::size_t n_grid = 100, const std::string& name = {});

std::string pfi_summary_csv(const PFIResult& result);
std::string pfi_shuffles_csv(const PFIResult& result);
std::string pdp_csv(const std::vector<PDPCurve>& curves);

}  // namespace gustuq::xai
