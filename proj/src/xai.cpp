#include "gustuq/xai.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gustuq/common.hpp"
#include "gustuq/metrics.hpp"

namespace gustuq::xai {

namespace {

struct Scores {
  double rmse;
  double r2;
};

Scores score(const std::vector<evidential::UncertaintyDecomposition>& preds,
             std::span<const double> targets, std::size_t spread_bins) {
  std::vector<double> sd(preds.size()), err(preds.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sd[i] = preds[i].total_sd;
    err[i] = preds[i].mean - targets[i];
    sq += err[i] * err[i];
  }
  const auto ss = metrics::spread_skill(sd, err, spread_bins);
  return {std::sqrt(sq / static_cast<double>(preds.size())), ss.r2};
}

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / n);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace

Predictor make_predictor(const nn::MLPModel& model, std::size_t threads) {
  return [&model, threads](const Matrix& x) { return evidential::predict(model, x, threads); };
}

PFIResult permutation_importance(const Predictor& predict, const Matrix& features,
                                 std::span<const double> targets,
                                 const std::vector<std::string>& feature_names,
                                 const PFIOptions& options) {
  const std::size_t n = features.rows();
  if (n < 2) throw UsageError("permutation importance needs at least 2 rows");
  if (targets.size() != n) throw DimensionError("targets and features differ in length");
  if (options.n_shuffles < 1) throw UsageError("at least one shuffle is required");
  if (!feature_names.empty() && feature_names.size() != features.cols()) {
    throw DimensionError("feature name count does not match column count");
  }

  PFIResult result;
  result.n_shuffles = options.n_shuffles;
  const Scores base = score(predict(features), targets, options.spread_bins);
  result.baseline_rmse = base.rmse;
  result.baseline_r2 = base.r2;

  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t s = 0; s < options.n_shuffles; ++s) {
    perms.push_back(options.permutation ? options.permutation(n, s)
                                        : seeded_permutation(n, derive_seed(options.seed, s)));
    if (perms.back().size() != n) throw DimensionError("permutation length does not match row count");
  }

  for (std::size_t f = 0; f < features.cols(); ++f) {
    FeatureImportance imp;
    imp.feature = feature_names.empty() ? "f" + std::to_string(f) : feature_names[f];
    const std::vector<double> column = features.column(f);
    const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
    imp.constant = *lo == *hi;

    if (imp.constant) {
      imp.delta_rmse.assign(options.n_shuffles, 0.0);
      imp.delta_r2.assign(options.n_shuffles, 0.0);
      warn("permutation importance: feature '" + imp.feature + "' is constant; reported as 0");
    } else {
      Matrix shuffled = features;
      std::vector<double> permuted(n);
      for (const auto& perm : perms) {
        for (std::size_t i = 0; i < n; ++i) permuted[i] = column[perm[i]];
        shuffled.set_column(f, permuted);
        const Scores s = score(predict(shuffled), targets, options.spread_bins);
        imp.delta_rmse.push_back(s.rmse - base.rmse);
        imp.delta_r2.push_back(base.r2 - s.r2);
      }
    }
    mean_sd(imp.delta_rmse, imp.mean_delta_rmse, imp.sd_delta_rmse);
    mean_sd(imp.delta_r2, imp.mean_delta_r2, imp.sd_delta_r2);
    result.features.push_back(std::move(imp));
  }
  return result;
}

PDPCurve partial_dependence(const Predictor& predict, const Matrix& features, std::size_t feature,
                            std::size_t n_grid, const std::string& name) {
  if (features.rows() == 0) throw UsageError("partial dependence on an empty dataset");
  if (feature >= features.cols()) throw UsageError("feature index " + std::to_string(feature) + " out of range");
  if (n_grid < 1) throw UsageError("grid needs at least one point");

  PDPCurve curve;
  curve.feature = feature;
  curve.name = name.empty() ? "f" + std::to_string(feature) : name;
  const std::vector<double> column = features.column(feature);
  const auto [lo_it, hi_it] = std::minmax_element(column.begin(), column.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (lo == hi || n_grid == 1) {
    if (lo == hi) warn("partial dependence: feature '" + curve.name + "' has zero range; single-point grid");
    curve.grid = {lo};
  } else {
    curve.grid.resize(n_grid);
    const double step = (hi - lo) / static_cast<double>(n_grid - 1);
    for (std::size_t k = 0; k < n_grid; ++k) curve.grid[k] = lo + step * static_cast<double>(k);
    curve.grid.back() = hi;
  }

  Matrix modified = features;
  std::vector<double> means(features.rows()), sds(features.rows());
  for (double v : curve.grid) {
    modified.fill_column(feature, v);
    const auto preds = predict(modified);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      means[i] = preds[i].mean;
      sds[i] = preds[i].total_sd;
    }
    double m, s;
    mean_sd(means, m, s);
    curve.mean_prediction.push_back(m);
    curve.sd_prediction.push_back(s);
    mean_sd(sds, m, s);
    curve.mean_total_sd.push_back(m);
    curve.sd_total_sd.push_back(s);
  }
  return curve;
}

std::string pfi_summary_csv(const PFIResult& result) {
  std::ostringstream out;
  out << "feature,mean_delta_rmse,sd_delta_rmse,mean_delta_r2_rmse_sigma_total,"
         "sd_delta_r2_rmse_sigma_total,n_shuffles,constant\n";
  for (const auto& f : result.features) {
    out << f.feature << ',' << format_double(f.mean_delta_rmse) << ',' << format_double(f.sd_delta_rmse)
        << ',' << format_double(f.mean_delta_r2) << ',' << format_double(f.sd_delta_r2) << ','
        << result.n_shuffles << ',' << (f.constant ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string pfi_shuffles_csv(const PFIResult& result) {
  std::ostringstream out;
  out << "feature,shuffle,delta_rmse,delta_r2_rmse_sigma_total\n";
  for (const auto& f : result.features) {
    for (std::size_t s = 0; s < f.delta_rmse.size(); ++s) {
      out << f.feature << ',' << s << ',' << format_double(f.delta_rmse[s]) << ','
          << format_double(f.delta_r2[s]) << '\n';
    }
  }
  return out.str();
}

std::string pdp_csv(const std::vector<PDPCurve>& curves) {
  std::ostringstream out;
  out << "feature,index,value,mean_prediction,sd_prediction,mean_total_sd,sd_total_sd\n";
  for (const auto& c : curves) {
    for (std::size_t k = 0; k < c.grid.size(); ++k) {
      out << c.name << ',' << k << ',' << format_double(c.grid[k]) << ','
          << format_double(c.mean_prediction[k]) << ',' << format_double(c.sd_prediction[k]) << ','
          << format_double(c.mean_total_sd[k]) << ',' << format_double(c.sd_total_sd[k]) << '\n';
    }
  }
  return out.str();
}

}  // namespace gustuq::xai
