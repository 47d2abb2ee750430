#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gustuq/evidential.hpp"

namespace gustuq::metrics {

struct ErrorMetrics {
  double bias = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double crmse = 0.0;
  double pearson_r = 0.0;  // NaN when either series has zero variance
};

ErrorMetrics error_metrics(std::span<const double> pred, std::span<const double> obs);

/// z-score for a two-sided confidence level. The four tabulated levels
/// 0.70/0.90/0.95/0.99 map to 1.04/1.65/1.96/2.58 exactly; any other level
/// in (0, 1) uses the exact standard normal quantile.
double z_score(double level);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

Interval prediction_interval(double mean, double sd, double level);

struct PredictionWithUQ {
  double mean = 0.0;
  double aleatoric_sd = 0.0;
  double epistemic_sd = 0.0;
  double total_sd = 0.0;
  double z = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool highly_uncertain = false;
};

PredictionWithUQ make_prediction(const evidential::UncertaintyDecomposition& d, double level,
                                 bool highly_uncertain = false);

/// Fraction of observations inside the closed interval [lower, upper].
/// Returns nullopt when every sample was excluded.
std::optional<double> picp(std::span<const PredictionWithUQ> preds, std::span<const double> obs,
                           bool exclude_flagged);

/// Linear-interpolation percentile (q in [0, 100]) between order statistics.
double percentile(std::span<const double> values, double q);

struct MaskResult {
  std::vector<bool> flags;
  double threshold = 0.0;
  std::size_t flagged = 0;
};

/// Flags samples whose total sd strictly exceeds the q-th percentile.
MaskResult mask_highly_uncertain(std::span<const double> total_sd, double q);

enum class UncertaintyKind { Aleatoric, Epistemic, Total };
const char* to_string(UncertaintyKind kind);

double normal_cdf(double x);

/// Phi((obs - mean) / sd) per sample. Throws DomainError when sd <= 0.
std::vector<double> pit_values(std::span<const double> mean, std::span<const double> sd,
                               std::span<const double> obs);
std::vector<double> pit_values(std::span<const evidential::UncertaintyDecomposition> preds,
                               std::span<const double> obs, UncertaintyKind kind);

struct PitdResult {
  std::vector<std::size_t> counts;
  double pitd = 0.0;
  double worst = 0.0;
  double skill = 0.0;
};

/// Histogram of PIT values in `bins` equal bins (1.0 falls in the last bin).
PitdResult pitd(std::span<const double> pit, std::size_t bins = 10);
/// PITD of an already binned histogram.
PitdResult pitd_from_counts(std::vector<std::size_t> counts);

struct SpreadSkillBin {
  double mean_sd = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

struct SpreadSkillResult {
  std::vector<SpreadSkillBin> bins;
  double slope = 0.0;      // least-squares RMSE-on-mean-sd fit; NaN with < 2 bins
  double intercept = 0.0;
  double r2 = 0.0;         // NaN when undefined
};

/// Equal-count bins over sd (ties never straddle a bin edge); per-bin RMSE
/// of `errors`; least-squares fit of binned RMSE on binned mean sd.
SpreadSkillResult spread_skill(std::span<const double> sd, std::span<const double> errors,
                               std::size_t n_bins = 20);

struct DiscardPoint {
  double fraction = 0.0;
  double rmse = 0.0;
  std::size_t retained = 0;
};

/// At each fraction f drops the ceil(f n) samples with largest sd (among
/// equal sd the lower original index is dropped first) and reports the RMSE
/// of the rest. Points that would retain nothing are skipped with a warning.
std::vector<DiscardPoint> discard_fraction(std::span<const double> sd, std::span<const double> pred,
                                           std::span<const double> obs,
                                           std::span<const double> fractions);

/// Default discard fractions 0, 0.05, ..., 0.95.
std::vector<double> default_discard_fractions();

struct EvalOptions {
  std::vector<double> levels{0.70, 0.90, 0.95, 0.99};
  double mask_percentile = 95.0;
  bool exclude_flagged = true;
  std::size_t pit_bins = 10;
  std::size_t spread_bins = 20;
  std::vector<double> discard_fractions = default_discard_fractions();
};

struct LevelCoverage {
  double level = 0.0;
  double z = 0.0;
  std::optional<double> picp;
};

struct PitSummary {
  UncertaintyKind kind = UncertaintyKind::Total;
  PitdResult result;
};

struct EvalReport {
  std::size_t n = 0;
  ErrorMetrics errors;
  double mask_threshold = 0.0;
  std::size_t flagged = 0;
  std::vector<LevelCoverage> coverage;
  std::vector<PitSummary> pit;
  std::vector<DiscardPoint> discard;
  SpreadSkillResult spread;
};

EvalReport evaluate(std::span<const evidential::UncertaintyDecomposition> preds,
                    std::span<const double> obs, const EvalOptions& options = {});

/// Structured JSON text of the report (keys stable, curves as arrays).
std::string report_to_json(const EvalReport& report);
/// Plot-ready CSV curves.
std::string discard_csv(const EvalReport& report);
std::string spread_skill_csv(const EvalReport& report);
std::string pit_histogram_csv(const EvalReport& report);

}  // namespace gustuq::metrics
