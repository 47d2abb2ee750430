#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gustuq/common.hpp"
#include "gustuq/matrix.hpp"

namespace gustuq::nn {

/// Width of the network output: one raw value per evidential parameter.
inline constexpr std::size_t kHeadWidth = 4;
inline constexpr double kLeakySlope = 0.1;

struct DenseLayer {
  Matrix weights;               // out x in
  std::vector<double> biases;   // out

  std::size_t in() const noexcept { return weights.cols(); }
  std::size_t out() const noexcept { return weights.rows(); }
};

/// Feed-forward network: leaky-ReLU on every hidden layer, linear output
/// of width kHeadWidth. Dropout (inverted scaling) acts on hidden
/// activations in training mode only; l1/l2 penalise weights, not biases.
struct MLPModel {
  std::vector<DenseLayer> layers;
  double dropout = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  /// Bumped on every optimizer step; caches from older versions are stale.
  std::uint64_t version = 0;

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;
  /// Throws DimensionError if layer shapes do not chain or the head is not
  /// kHeadWidth wide, UsageError for an out-of-range dropout rate.
  void validate() const;
};

/// Fan-in scaled uniform init: weights ~ U(-1/sqrt(in), 1/sqrt(in)), zero biases.
MLPModel make_mlp(std::size_t input_width, std::size_t hidden_layers, std::size_t hidden_units,
                  double dropout, double l1, double l2, std::uint64_t seed);

struct ForwardCache {
  std::uint64_t model_version = 0;
  bool valid = false;
  std::vector<Matrix> inputs;     // input to layer i (after activation and dropout)
  std::vector<Matrix> preacts;    // pre-activation of hidden layer i
  std::vector<Matrix> masks;      // dropout multipliers per hidden layer (empty when unused)
};

struct ForwardResult {
  Matrix outputs;  // B x kHeadWidth
  ForwardCache cache;
};

/// `rng` is only consumed when `train_mode` is set and dropout > 0.
ForwardResult forward(const MLPModel& model, const Matrix& batch, bool train_mode, Rng* rng);

/// Inference-only forward pass; rows are independent, so this may be split
/// across threads on a shared read-only model.
Matrix predict_raw(const MLPModel& model, const Matrix& batch);
Matrix predict_raw(const MLPModel& model, const Matrix& batch, std::size_t threads);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

/// Chains `upstream` (dLoss/dOutputs) back through the cached pass and adds
/// the l1 (sign, 0 at 0) and l2 (2*l2*W) penalty gradients.
Gradients backward(const MLPModel& model, const ForwardCache& cache, const Matrix& upstream);

/// l1 * sum|W| + l2 * sum W^2 over all weight matrices.
double penalty(const MLPModel& model);

/// Adam with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const MLPModel& model, double learning_rate, double beta1 = 0.9,
                         double beta2 = 0.999, double epsilon = 1e-8);

  /// Throws NumericError naming the layer if any gradient is non-finite;
  /// the model is left untouched in that case.
  void step(MLPModel& model, const Gradients& grads);

  std::uint64_t steps() const noexcept { return steps_; }
  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
  Gradients m_, v_;
};

}  // namespace gustuq::nn
