#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gustuq/matrix.hpp"
#include "gustuq/nncore.hpp"

namespace gustuq::evidential {

/// Positivity floor added after every softplus in the head.
inline constexpr double kHeadFloor = 1e-6;

/// Normal-Inverse-Gamma parameters for one sample: gamma is the predicted
/// mean, nu the virtual observation count, alpha the shape (> 1) and beta
/// the scale (target units squared).
struct NIGParams {
  double gamma = 0.0;
  double nu = 1.0;
  double alpha = 2.0;
  double beta = 1.0;

  bool valid() const;
};

struct UncertaintyDecomposition {
  double mean = 0.0;
  double aleatoric_var = 0.0;
  double epistemic_var = 0.0;
  double total_var = 0.0;
  double aleatoric_sd = 0.0;
  double epistemic_sd = 0.0;
  double total_sd = 0.0;
};

double softplus(double x);
double sigmoid(double x);

/// gamma = raw0, nu = softplus(raw1) + eps, alpha = softplus(raw2) + 1 + eps,
/// beta = softplus(raw3) + eps.
NIGParams head_transform(std::span<const double> raw);
std::vector<NIGParams> head_transform(const Matrix& raw);

/// Mean, E[sigma^2], Var(mu) and their sum. Throws DomainError if the
/// parameters are outside the NIG support.
UncertaintyDecomposition decompose(const NIGParams& p);

/// Negative log of the Student-t marginal of y under the NIG prior.
double nig_nll(const NIGParams& p, double y);
/// |y - gamma| * (2 nu + alpha)
double evidence_regularizer(const NIGParams& p, double y);

/// d/d(gamma, nu, alpha, beta) of nll + lambda * regularizer.
std::array<double, 4> sample_loss_gradient(const NIGParams& p, double y, double lambda);

struct LossResult {
  double loss = 0.0;        // mean(nll + lambda * reg) + weight penalty
  double mean_nll = 0.0;
  double mean_reg = 0.0;
  double weight_penalty = 0.0;
  Matrix grad_raw;          // dLoss/d(raw head outputs), B x 4
};

/// Batch mean of the evidential loss with gradients chained through the
/// head transform. `weight_penalty` is added to the loss as-is (its gradient
/// is handled by nn::backward). Throws NumericError naming the first
/// offending sample if any per-sample loss is non-finite.
LossResult total_loss(const Matrix& raw, std::span<const double> targets, double lambda,
                      double weight_penalty = 0.0);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;  // 0 disables early stopping
  double lambda = 0.01;
  std::uint64_t seed = 42;
  std::size_t hidden_layers = 1;
  std::size_t hidden_units = 64;
  double dropout = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;

  void validate() const;
};

/// Standardized features and targets of one split.
struct TrainingData {
  Matrix features;
  std::vector<double> targets;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
  double val_mean_total_sd = 0.0;
  bool calibration_warning = false;
};

struct TrainResult {
  nn::MLPModel model;          // snapshot at the best validation MAE
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

/// Mini-batch Adam on the evidential loss with early stopping on
/// validation MAE. Deterministic for a given config.seed.
TrainResult train_evidential(const TrainingData& train, const TrainingData& validation,
                             const TrainConfig& config);

std::vector<UncertaintyDecomposition> predict(const nn::MLPModel& model, const Matrix& features,
                                              std::size_t threads = 1);

}  // namespace gustuq::evidential
