#include "gustuq/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

#include "gustuq/common.hpp"

namespace gustuq::evidential {

bool NIGParams::valid() const {
  return std::isfinite(gamma) && nu > 0.0 && alpha > 1.0 && beta > 0.0 && std::isfinite(nu) &&
         std::isfinite(alpha) && std::isfinite(beta);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

NIGParams head_transform(std::span<const double> raw) {
  if (raw.size() != nn::kHeadWidth) throw DimensionError("head expects 4 raw outputs");
  for (double v : raw) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw NumericError("non-finite raw head output");
    }
  }
  // -inf is admitted for the positivity parameters: softplus(-inf) = 0 and the floor holds.
  if (!std::isfinite(raw[0])) throw NumericError("non-finite raw mean output");
  return {raw[0], softplus(raw[1]) + kHeadFloor, softplus(raw[2]) + 1.0 + kHeadFloor,
          softplus(raw[3]) + kHeadFloor};
}

std::vector<NIGParams> head_transform(const Matrix& raw) {
  if (raw.cols() != nn::kHeadWidth) throw DimensionError("head expects 4 raw outputs per row");
  std::vector<NIGParams> out;
  out.reserve(raw.rows());
  for (std::size_t r = 0; r < raw.rows(); ++r) out.push_back(head_transform(raw.row(r)));
  return out;
}

UncertaintyDecomposition decompose(const NIGParams& p) {
  if (!(p.alpha > 1.0)) throw DomainError("alpha must exceed 1 for finite NIG moments");
  if (!(p.nu > 0.0) || !(p.beta > 0.0)) throw DomainError("nu and beta must be positive");
  UncertaintyDecomposition d;
  d.mean = p.gamma;
  d.aleatoric_var = p.beta / (p.alpha - 1.0);
  d.epistemic_var = p.beta / (p.nu * (p.alpha - 1.0));
  d.total_var = d.aleatoric_var + d.epistemic_var;
  d.aleatoric_sd = std::sqrt(d.aleatoric_var);
  d.epistemic_sd = std::sqrt(d.epistemic_var);
  d.total_sd = std::sqrt(d.total_var);
  return d;
}

double nig_nll(const NIGParams& p, double y) {
  const double d = y - p.gamma;
  const double log_omega = std::log(2.0 * p.beta) + std::log1p(p.nu);
  const double omega = std::exp(log_omega);
  return 0.5 * (std::log(std::numbers::pi) - std::log(p.nu)) - p.alpha * log_omega +
         (p.alpha + 0.5) * std::log(p.nu * d * d + omega) + std::lgamma(p.alpha) -
         std::lgamma(p.alpha + 0.5);
}

double evidence_regularizer(const NIGParams& p, double y) {
  return std::abs(y - p.gamma) * (2.0 * p.nu + p.alpha);
}

std::array<double, 4> sample_loss_gradient(const NIGParams& p, double y, double lambda) {
  const double d = y - p.gamma;
  const double omega = 2.0 * p.beta * (1.0 + p.nu);
  const double a = p.nu * d * d + omega;
  const double ah = p.alpha + 0.5;

  double g_gamma = ah * (-2.0 * p.nu * d) / a;
  double g_nu = -0.5 / p.nu - p.alpha * 2.0 * p.beta / omega + ah * (d * d + 2.0 * p.beta) / a;
  double g_alpha = -std::log(omega) + std::log(a) + boost::math::digamma(p.alpha) -
                   boost::math::digamma(ah);
  double g_beta = -p.alpha / p.beta + ah * 2.0 * (1.0 + p.nu) / a;

  if (lambda != 0.0) {
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    const double ad = std::abs(d);
    g_gamma += lambda * (-sign) * (2.0 * p.nu + p.alpha);
    g_nu += lambda * 2.0 * ad;
    g_alpha += lambda * ad;
  }
  return {g_gamma, g_nu, g_alpha, g_beta};
}

LossResult total_loss(const Matrix& raw, std::span<const double> targets, double lambda,
                      double weight_penalty) {
  if (!(lambda >= 0.0)) throw UsageError("evidential coefficient must be non-negative");
  if (raw.cols() != nn::kHeadWidth) throw DimensionError("raw outputs must have 4 columns");
  if (raw.rows() != targets.size()) throw DimensionError("raw outputs and targets differ in length");
  if (raw.rows() == 0) throw UsageError("empty batch");

  const std::size_t n = raw.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult result;
  result.grad_raw = Matrix(n, nn::kHeadWidth);
  double nll_sum = 0.0;
  double reg_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = raw.row(i);
    const NIGParams p = head_transform(r);
    const double nll = nig_nll(p, targets[i]);
    const double reg = evidence_regularizer(p, targets[i]);
    if (!std::isfinite(nll) || !std::isfinite(reg)) {
      throw NumericError("non-finite loss at sample " + std::to_string(i));
    }
    nll_sum += nll;
    reg_sum += reg;

    const auto g = sample_loss_gradient(p, targets[i], lambda);
    auto out = result.grad_raw.row(i);
    out[0] = g[0] * inv_n;
    out[1] = g[1] * sigmoid(r[1]) * inv_n;
    out[2] = g[2] * sigmoid(r[2]) * inv_n;
    out[3] = g[3] * sigmoid(r[3]) * inv_n;
  }
  result.mean_nll = nll_sum * inv_n;
  result.mean_reg = reg_sum * inv_n;
  result.weight_penalty = weight_penalty;
  result.loss = result.mean_nll + lambda * result.mean_reg + weight_penalty;
  return result;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("evidential coefficient must be non-negative");
  if (max_epochs < 1) throw ConfigError("max epochs must be at least 1");
  if (!(dropout >= 0.0 && dropout <= 0.5)) throw ConfigError("dropout must lie in [0, 0.5]");
  if (!(l1 >= 0.0) || !(l2 >= 0.0)) throw ConfigError("l1/l2 weights must be non-negative");
  if (hidden_layers > 0 && hidden_units == 0) throw ConfigError("hidden layers need units");
}

std::vector<UncertaintyDecomposition> predict(const nn::MLPModel& model, const Matrix& features,
                                              std::size_t threads) {
  const Matrix raw = nn::predict_raw(model, features, threads);
  std::vector<UncertaintyDecomposition> out;
  out.reserve(raw.rows());
  for (std::size_t r = 0; r < raw.rows(); ++r) out.push_back(decompose(head_transform(raw.row(r))));
  return out;
}

namespace {

double population_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

}  // namespace

TrainResult train_evidential(const TrainingData& train, const TrainingData& validation,
                             const TrainConfig& config) {
  config.validate();
  if (train.features.rows() == 0 || train.targets.empty()) throw ConfigError("training split is empty");
  if (validation.features.rows() == 0 || validation.targets.empty()) {
    throw ConfigError("validation split is empty");
  }
  if (train.features.rows() != train.targets.size() ||
      validation.features.rows() != validation.targets.size()) {
    throw DimensionError("features and targets differ in length");
  }
  if (validation.features.cols() != train.features.cols()) {
    throw DimensionError("train and validation feature widths differ");
  }

  nn::MLPModel model = nn::make_mlp(train.features.cols(), config.hidden_layers, config.hidden_units,
                                    config.dropout, config.l1, config.l2,
                                    derive_seed(config.seed, 0));
  nn::AdamOptimizer optimizer(model, config.learning_rate);
  Rng rng(derive_seed(config.seed, 1));

  const std::size_t n = train.features.rows();
  const std::size_t batch = std::min(config.batch_size, n);
  const double target_sd = population_sd(validation.targets);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.model = model;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = train.features.select_rows(idx);
      std::vector<double> yb(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) yb[k] = train.targets[idx[k]];

      auto fwd = nn::forward(model, xb, true, &rng);
      LossResult loss;
      try {
        loss = total_loss(fwd.outputs, yb, config.lambda, nn::penalty(model));
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what() + " of batch starting at " +
                           std::to_string(start) + " (training row " +
                           std::to_string(idx.front()) + " first)");
      }
      const auto grads = nn::backward(model, fwd.cache, loss.grad_raw);
      optimizer.step(model, grads);
      loss_sum += loss.loss * static_cast<double>(idx.size());
    }

    const Matrix val_raw = nn::predict_raw(model, validation.features);
    const LossResult val_loss = total_loss(val_raw, validation.targets, config.lambda, nn::penalty(model));
    double abs_err = 0.0;
    double sd_sum = 0.0;
    for (std::size_t r = 0; r < val_raw.rows(); ++r) {
      const auto d = decompose(head_transform(val_raw.row(r)));
      abs_err += std::abs(d.mean - validation.targets[r]);
      sd_sum += d.total_sd;
    }
    const double nv = static_cast<double>(val_raw.rows());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_loss = val_loss.loss;
    rec.val_mae = abs_err / nv;
    rec.val_mean_total_sd = sd_sum / nv;
    rec.calibration_warning = target_sd > 0.0 && rec.val_mean_total_sd > 100.0 * target_sd;
    if (rec.calibration_warning) {
      std::ostringstream msg;
      msg << "epoch " << epoch << ": validation mean total sd " << rec.val_mean_total_sd
          << " exceeds 100x the target sd " << target_sd;
      warn(msg.str());
    }
    result.log.push_back(rec);

    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace gustuq::evidential
