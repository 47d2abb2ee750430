#include "gustuq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "gustuq/common.hpp"

namespace gustuq::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw UsageError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ErrorMetrics error_metrics(std::span<const double> pred, std::span<const double> obs) {
  check_aligned(pred.size(), obs.size(), "error_metrics");
  if (pred.empty()) throw UsageError("error_metrics: empty input");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::isnan(pred[i]) || std::isnan(obs[i])) {
      throw UsageError("error_metrics: NaN at index " + std::to_string(i));
    }
  }
  const double n = static_cast<double>(pred.size());
  const double pm = mean_of(pred);
  const double om = mean_of(obs);
  double bias = 0.0, abs_sum = 0.0, sq_sum = 0.0, csq = 0.0, spp = 0.0, soo = 0.0, spo = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - obs[i];
    bias += e;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    const double dp = pred[i] - pm;
    const double dob = obs[i] - om;
    csq += (dp - dob) * (dp - dob);
    spp += dp * dp;
    soo += dob * dob;
    spo += dp * dob;
  }
  ErrorMetrics m;
  m.bias = bias / n;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.crmse = std::sqrt(csq / n);
  m.pearson_r = (spp > 0.0 && soo > 0.0) ? spo / std::sqrt(spp * soo) : kNaN;
  return m;
}

double z_score(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw UsageError("confidence level must lie in (0, 1), got " + format_double(level));
  }
  struct Tabulated {
    double level, z;
  };
  static constexpr Tabulated kTable[] = {{0.70, 1.04}, {0.90, 1.65}, {0.95, 1.96}, {0.99, 2.58}};
  for (const auto& t : kTable) {
    if (std::abs(level - t.level) < 1e-12) return t.z;
  }
  return boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
}

Interval prediction_interval(double mean, double sd, double level) {
  const double z = z_score(level);
  if (!(sd >= 0.0)) throw DomainError("standard deviation must be non-negative");
  return {mean - z * sd, mean + z * sd};
}

PredictionWithUQ make_prediction(const evidential::UncertaintyDecomposition& d, double level,
                                 bool highly_uncertain) {
  PredictionWithUQ p;
  p.mean = d.mean;
  p.aleatoric_sd = d.aleatoric_sd;
  p.epistemic_sd = d.epistemic_sd;
  p.total_sd = d.total_sd;
  p.z = z_score(level);
  const auto pi = prediction_interval(d.mean, d.total_sd, level);
  p.lower = pi.lower;
  p.upper = pi.upper;
  p.highly_uncertain = highly_uncertain;
  return p;
}

std::optional<double> picp(std::span<const PredictionWithUQ> preds, std::span<const double> obs,
                           bool exclude_flagged) {
  check_aligned(preds.size(), obs.size(), "picp");
  std::size_t kept = 0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (exclude_flagged && preds[i].highly_uncertain) continue;
    ++kept;
    if (preds[i].lower <= obs[i] && obs[i] <= preds[i].upper) ++covered;
  }
  if (kept == 0) return std::nullopt;
  return static_cast<double>(covered) / static_cast<double>(kept);
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw UsageError("percentile of an empty vector");
  if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile must lie in [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = static_cast<double>(sorted.size() - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MaskResult mask_highly_uncertain(std::span<const double> total_sd, double q) {
  if (total_sd.empty()) throw UsageError("mask_highly_uncertain: empty input");
  if (!(q > 0.0 && q < 100.0)) throw UsageError("mask percentile must lie in (0, 100)");
  MaskResult r;
  r.threshold = percentile(total_sd, q);
  r.flags.resize(total_sd.size());
  for (std::size_t i = 0; i < total_sd.size(); ++i) {
    r.flags[i] = total_sd[i] > r.threshold;
    if (r.flags[i]) ++r.flagged;
  }
  return r;
}

const char* to_string(UncertaintyKind kind) {
  switch (kind) {
    case UncertaintyKind::Aleatoric: return "aleatoric";
    case UncertaintyKind::Epistemic: return "epistemic";
    case UncertaintyKind::Total: return "total";
  }
  return "unknown";
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<double> pit_values(std::span<const double> mean, std::span<const double> sd,
                               std::span<const double> obs) {
  check_aligned(mean.size(), obs.size(), "pit_values");
  check_aligned(sd.size(), obs.size(), "pit_values");
  std::vector<double> out(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!(sd[i] > 0.0)) throw DomainError("PIT requires sd > 0 (index " + std::to_string(i) + ")");
    out[i] = normal_cdf((obs[i] - mean[i]) / sd[i]);
  }
  return out;
}

std::vector<double> pit_values(std::span<const evidential::UncertaintyDecomposition> preds,
                               std::span<const double> obs, UncertaintyKind kind) {
  std::vector<double> mean(preds.size()), sd(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mean[i] = preds[i].mean;
    sd[i] = kind == UncertaintyKind::Aleatoric   ? preds[i].aleatoric_sd
            : kind == UncertaintyKind::Epistemic ? preds[i].epistemic_sd
                                                 : preds[i].total_sd;
  }
  return pit_values(mean, sd, obs);
}

PitdResult pitd_from_counts(std::vector<std::size_t> counts) {
  const std::size_t m = counts.size();
  if (m < 2) throw UsageError("PITD needs at least 2 bins");
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (n == 0) throw UsageError("PITD of an empty sample");
  const double md = static_cast<double>(m);
  double ss = 0.0;
  for (std::size_t c : counts) {
    const double d = static_cast<double>(c) / static_cast<double>(n) - 1.0 / md;
    ss += d * d;
  }
  PitdResult r;
  r.counts = std::move(counts);
  r.pitd = std::sqrt(ss / md);
  r.worst = std::sqrt(md - 1.0) / md;
  r.skill = std::clamp(1.0 - r.pitd / r.worst, 0.0, 1.0);
  return r;
}

PitdResult pitd(std::span<const double> pit, std::size_t bins) {
  if (bins < 2) throw UsageError("PITD needs at least 2 bins");
  if (pit.empty()) throw UsageError("PITD of an empty sample");
  std::vector<std::size_t> counts(bins, 0);
  for (double p : pit) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("PIT value outside [0, 1]");
    const auto b = std::min(static_cast<std::size_t>(p * static_cast<double>(bins)), bins - 1);
    ++counts[b];
  }
  return pitd_from_counts(std::move(counts));
}

SpreadSkillResult spread_skill(std::span<const double> sd, std::span<const double> errors,
                               std::size_t n_bins) {
  check_aligned(sd.size(), errors.size(), "spread_skill");
  if (n_bins < 2) throw UsageError("spread_skill needs at least 2 bins");
  if (sd.empty()) throw UsageError("spread_skill: empty input");
  const std::size_t n = sd.size();
  if (n < n_bins) {
    warn("spread_skill: " + std::to_string(n) + " samples for " + std::to_string(n_bins) +
         " bins; reducing bin count to " + std::to_string(n));
    n_bins = n;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sd[a] < sd[b]; });

  // Equal-count split by rank, then merge neighbours whose boundary values tie.
  std::vector<std::size_t> starts;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t s = b * n / n_bins;
    if (starts.empty() || s > starts.back()) starts.push_back(s);
  }
  std::vector<std::size_t> merged;
  for (std::size_t s : starts) {
    if (!merged.empty() && sd[order[s]] == sd[order[s - 1]]) continue;
    merged.push_back(s);
  }

  SpreadSkillResult r;
  for (std::size_t k = 0; k < merged.size(); ++k) {
    const std::size_t begin = merged[k];
    const std::size_t end = k + 1 < merged.size() ? merged[k + 1] : n;
    double sd_sum = 0.0, sq = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      sd_sum += sd[order[i]];
      sq += errors[order[i]] * errors[order[i]];
    }
    const double c = static_cast<double>(end - begin);
    r.bins.push_back({sd_sum / c, std::sqrt(sq / c), end - begin});
  }

  r.slope = r.intercept = r.r2 = kNaN;
  if (r.bins.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (const auto& b : r.bins) {
      mx += b.mean_sd;
      my += b.rmse;
    }
    mx /= static_cast<double>(r.bins.size());
    my /= static_cast<double>(r.bins.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& b : r.bins) {
      sxx += (b.mean_sd - mx) * (b.mean_sd - mx);
      syy += (b.rmse - my) * (b.rmse - my);
      sxy += (b.mean_sd - mx) * (b.rmse - my);
    }
    if (sxx > 0.0) {
      r.slope = sxy / sxx;
      r.intercept = my - r.slope * mx;
      if (syy > 0.0) r.r2 = sxy * sxy / (sxx * syy);
    }
  }
  return r;
}

std::vector<DiscardPoint> discard_fraction(std::span<const double> sd, std::span<const double> pred,
                                           std::span<const double> obs,
                                           std::span<const double> fractions) {
  check_aligned(sd.size(), pred.size(), "discard_fraction");
  check_aligned(pred.size(), obs.size(), "discard_fraction");
  const std::size_t n = sd.size();
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    if (!(fractions[k] >= 0.0 && fractions[k] < 1.0)) throw UsageError("discard fractions must lie in [0, 1)");
    if (k > 0 && !(fractions[k] > fractions[k - 1])) throw UsageError("discard fractions must be ascending");
  }

  // Most uncertain first; equal sd keeps original index order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sd[a] > sd[b]; });

  // suffix[i]: sum of squared errors over order[i..n)
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    const double e = pred[order[i]] - obs[order[i]];
    suffix[i] = suffix[i + 1] + e * e;
  }

  std::vector<DiscardPoint> curve;
  for (double f : fractions) {
    const auto drop = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
    if (drop >= n) {
      warn("discard_fraction: fraction " + format_double(f) + " leaves no samples; skipped");
      continue;
    }
    const std::size_t kept = n - drop;
    curve.push_back({f, std::sqrt(suffix[drop] / static_cast<double>(kept)), kept});
  }
  return curve;
}

std::vector<double> default_discard_fractions() {
  std::vector<double> f;
  for (int i = 0; i < 20; ++i) f.push_back(i / 20.0);
  return f;
}

EvalReport evaluate(std::span<const evidential::UncertaintyDecomposition> preds,
                    std::span<const double> obs, const EvalOptions& options) {
  check_aligned(preds.size(), obs.size(), "evaluate");
  if (preds.empty()) throw UsageError("evaluate: no samples");
  const std::size_t n = preds.size();
  std::vector<double> mean(n), total(n);
  for (std::size_t i = 0; i < n; ++i) {
    mean[i] = preds[i].mean;
    total[i] = preds[i].total_sd;
  }

  EvalReport r;
  r.n = n;
  r.errors = error_metrics(mean, obs);
  const auto mask = mask_highly_uncertain(total, options.mask_percentile);
  r.mask_threshold = mask.threshold;
  r.flagged = mask.flagged;

  for (double level : options.levels) {
    std::vector<PredictionWithUQ> p;
    p.reserve(n);
    for (std::size_t i = 0; i < n; ++i) p.push_back(make_prediction(preds[i], level, mask.flags[i]));
    r.coverage.push_back({level, z_score(level), picp(p, obs, options.exclude_flagged)});
  }

  for (auto kind : {UncertaintyKind::Aleatoric, UncertaintyKind::Epistemic, UncertaintyKind::Total}) {
    const bool positive = std::all_of(preds.begin(), preds.end(), [&](const auto& d) {
      return (kind == UncertaintyKind::Aleatoric ? d.aleatoric_sd
              : kind == UncertaintyKind::Epistemic ? d.epistemic_sd
                                                   : d.total_sd) > 0.0;
    });
    if (!positive) {
      warn(std::string("PIT for ") + to_string(kind) + " uncertainty skipped: some sd is not positive");
      continue;
    }
    r.pit.push_back({kind, pitd(pit_values(preds, obs, kind), options.pit_bins)});
  }

  std::vector<double> errors(n);
  for (std::size_t i = 0; i < n; ++i) errors[i] = mean[i] - obs[i];
  r.spread = spread_skill(total, errors, options.spread_bins);
  r.discard = discard_fraction(total, mean, obs, options.discard_fractions);
  return r;
}

namespace {

nlohmann::ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["n"] = report.n;
  j["bias"] = num(report.errors.bias);
  j["mae"] = num(report.errors.mae);
  j["rmse"] = num(report.errors.rmse);
  j["crmse"] = num(report.errors.crmse);
  j["pearson_r"] = num(report.errors.pearson_r);
  j["mask_threshold"] = num(report.mask_threshold);
  j["flagged"] = report.flagged;
  ordered_json cov = ordered_json::array();
  for (const auto& c : report.coverage) {
    cov.push_back({{"level", c.level}, {"z", c.z}, {"picp", c.picp ? num(*c.picp) : ordered_json(nullptr)}});
  }
  j["picp"] = cov;
  ordered_json pit = ordered_json::object();
  for (const auto& p : report.pit) {
    pit[to_string(p.kind)] = {{"pitd", num(p.result.pitd)},
                              {"pitd_skill", num(p.result.skill)},
                              {"counts", p.result.counts}};
  }
  j["pit"] = pit;
  j["spread_skill"] = {{"slope", num(report.spread.slope)},
                       {"intercept", num(report.spread.intercept)},
                       {"r2_rmse_sigma_total", num(report.spread.r2)}};
  ordered_json bins = ordered_json::array();
  for (const auto& b : report.spread.bins) {
    bins.push_back({{"mean_sd", num(b.mean_sd)}, {"rmse", num(b.rmse)}, {"count", b.count}});
  }
  j["spread_skill"]["bins"] = bins;
  ordered_json curve = ordered_json::array();
  for (const auto& d : report.discard) {
    curve.push_back({{"fraction", d.fraction}, {"rmse", num(d.rmse)}, {"retained", d.retained}});
  }
  j["discard_fraction"] = curve;
  return j.dump(2) + "\n";
}

std::string discard_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "fraction,rmse,retained\n";
  for (const auto& d : report.discard) {
    out << format_double(d.fraction) << ',' << format_double(d.rmse) << ',' << d.retained << '\n';
  }
  return out.str();
}

std::string spread_skill_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "bin,mean_sd,rmse,count\n";
  for (std::size_t b = 0; b < report.spread.bins.size(); ++b) {
    const auto& s = report.spread.bins[b];
    out << b << ',' << format_double(s.mean_sd) << ',' << format_double(s.rmse) << ',' << s.count << '\n';
  }
  return out.str();
}

std::string pit_histogram_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "kind,bin,lower,upper,count,fraction\n";
  for (const auto& p : report.pit) {
    const auto& counts = p.result.counts;
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const double m = static_cast<double>(counts.size());
    for (std::size_t b = 0; b < counts.size(); ++b) {
      out << to_string(p.kind) << ',' << b << ',' << format_double(static_cast<double>(b) / m) << ','
          << format_double(static_cast<double>(b + 1) / m) << ',' << counts[b] << ','
          << format_double(static_cast<double>(counts[b]) / static_cast<double>(total)) << '\n';
    }
  }
  return out.str();
}

}  // namespace gustuq::metrics
