#include "gustuq/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

namespace gustuq::nn {

namespace {

double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
double leaky_grad(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

// out(r, o) = sum_i in(r, i) * W(o, i) + b(o)
Matrix affine(const Matrix& in, const DenseLayer& layer) {
  const std::size_t rows = in.rows();
  const std::size_t n_in = layer.in();
  const std::size_t n_out = layer.out();
  Matrix out(rows, n_out);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.row(r).data();
    double* y = out.row(r).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* w = layer.weights.row(o).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < n_in; ++i) acc += x[i] * w[i];
      y[o] = acc + layer.biases[o];
    }
  }
  return out;
}

Gradients zeros_like(const MLPModel& model) {
  Gradients g;
  for (const auto& layer : model.layers) {
    g.weights.emplace_back(layer.out(), layer.in());
    g.biases.emplace_back(layer.out(), 0.0);
  }
  return g;
}

}  // namespace

std::size_t MLPModel::input_width() const {
  return layers.empty() ? 0 : layers.front().in();
}

std::size_t MLPModel::output_width() const {
  return layers.empty() ? 0 : layers.back().out();
}

std::size_t MLPModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

void MLPModel::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].biases.size() != layers[i].out()) {
      throw DimensionError("layer " + std::to_string(i) + ": bias length " +
                           std::to_string(layers[i].biases.size()) + " != output width " +
                           std::to_string(layers[i].out()));
    }
    if (i + 1 < layers.size() && layers[i].out() != layers[i + 1].in()) {
      throw DimensionError("layer " + std::to_string(i) + " output width " +
                           std::to_string(layers[i].out()) + " does not match layer " +
                           std::to_string(i + 1) + " input width " +
                           std::to_string(layers[i + 1].in()));
    }
  }
  if (output_width() != kHeadWidth) {
    throw DimensionError("final layer width " + std::to_string(output_width()) + ", expected " +
                         std::to_string(kHeadWidth));
  }
  if (!(dropout >= 0.0 && dropout <= 0.5)) throw UsageError("dropout rate must lie in [0, 0.5]");
  if (!(l1 >= 0.0) || !(l2 >= 0.0)) throw UsageError("l1/l2 weights must be non-negative");
}

MLPModel make_mlp(std::size_t input_width, std::size_t hidden_layers, std::size_t hidden_units,
                  double dropout, double l1, double l2, std::uint64_t seed) {
  if (input_width == 0) throw UsageError("input width must be positive");
  if (hidden_layers > 0 && hidden_units == 0) throw UsageError("hidden layers need at least one unit");
  Rng rng(seed);
  MLPModel model;
  model.dropout = dropout;
  model.l1 = l1;
  model.l2 = l2;
  std::size_t in = input_width;
  for (std::size_t i = 0; i <= hidden_layers; ++i) {
    const std::size_t out = (i == hidden_layers) ? kHeadWidth : hidden_units;
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : layer.weights.data()) w = (2.0 * uniform01(rng) - 1.0) * bound;
    model.layers.push_back(std::move(layer));
    in = out;
  }
  model.validate();
  return model;
}

ForwardResult forward(const MLPModel& model, const Matrix& batch, bool train_mode, Rng* rng) {
  if (model.layers.empty()) throw DimensionError("model has no layers");
  if (batch.cols() != model.input_width()) {
    throw DimensionError("batch width " + std::to_string(batch.cols()) + " != model input width " +
                         std::to_string(model.input_width()));
  }
  const bool use_dropout = train_mode && model.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw UsageError("dropout in train mode requires an rng");

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.model_version = model.version;
  cache.inputs.reserve(model.layers.size());
  cache.inputs.push_back(batch);

  const double keep_scale = use_dropout ? 1.0 / (1.0 - model.dropout) : 1.0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Matrix z = affine(cache.inputs.back(), model.layers[i]);
    if (i + 1 == model.layers.size()) {
      result.outputs = std::move(z);
      break;
    }
    Matrix a(z.rows(), z.cols());
    Matrix mask;
    if (use_dropout) mask = Matrix(z.rows(), z.cols());
    for (std::size_t k = 0; k < z.size(); ++k) {
      double v = leaky(z.data()[k]);
      if (use_dropout) {
        const double m = uniform01(*rng) < model.dropout ? 0.0 : keep_scale;
        mask.data()[k] = m;
        v *= m;
      }
      a.data()[k] = v;
    }
    cache.preacts.push_back(std::move(z));
    cache.masks.push_back(std::move(mask));
    cache.inputs.push_back(std::move(a));
  }
  for (double v : result.outputs.data()) {
    if (!std::isfinite(v)) throw NumericError("forward pass produced a non-finite output");
  }
  cache.valid = true;
  return result;
}

Matrix predict_raw(const MLPModel& model, const Matrix& batch) {
  return forward(model, batch, false, nullptr).outputs;
}

Matrix predict_raw(const MLPModel& model, const Matrix& batch, std::size_t threads) {
  const std::size_t rows = batch.rows();
  threads = std::max<std::size_t>(1, std::min(threads, rows / 256 + 1));
  if (threads == 1) return predict_raw(model, batch);

  Matrix out(rows, kHeadWidth);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (rows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, t, begin, end] {
      try {
        Matrix part = predict_raw(model, batch.slice_rows(begin, end));
        std::copy(part.data().begin(), part.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(begin * kHeadWidth));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Gradients backward(const MLPModel& model, const ForwardCache& cache, const Matrix& upstream) {
  if (!cache.valid) throw UsageError("backward called without a forward cache");
  if (cache.model_version != model.version || cache.inputs.size() != model.layers.size()) {
    throw UsageError("forward cache is stale: model changed since the forward pass");
  }
  const std::size_t batch = cache.inputs.front().rows();
  if (upstream.rows() != batch || upstream.cols() != model.output_width()) {
    throw DimensionError("upstream gradient shape does not match forward outputs");
  }

  Gradients grads = zeros_like(model);
  Matrix delta = upstream;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& layer = model.layers[li];
    const Matrix& in = cache.inputs[li];
    Matrix& dw = grads.weights[li];
    auto& db = grads.biases[li];
    for (std::size_t r = 0; r < batch; ++r) {
      const double* d = delta.row(r).data();
      const double* x = in.row(r).data();
      for (std::size_t o = 0; o < layer.out(); ++o) {
        const double g = d[o];
        db[o] += g;
        if (g == 0.0) continue;
        double* w = dw.row(o).data();
        for (std::size_t i = 0; i < layer.in(); ++i) w[i] += g * x[i];
      }
    }
    if (li == 0) break;

    Matrix next(batch, layer.in());
    for (std::size_t r = 0; r < batch; ++r) {
      const double* d = delta.row(r).data();
      double* n = next.row(r).data();
      for (std::size_t o = 0; o < layer.out(); ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        const double* w = layer.weights.row(o).data();
        for (std::size_t i = 0; i < layer.in(); ++i) n[i] += g * w[i];
      }
    }
    const Matrix& z = cache.preacts[li - 1];
    const Matrix& mask = cache.masks[li - 1];
    for (std::size_t k = 0; k < next.size(); ++k) {
      double g = next.data()[k] * leaky_grad(z.data()[k]);
      if (!mask.empty()) g *= mask.data()[k];
      next.data()[k] = g;
    }
    delta = std::move(next);
  }

  if (model.l1 > 0.0 || model.l2 > 0.0) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      const auto& w = model.layers[li].weights.data();
      auto& g = grads.weights[li].data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double sign = w[k] > 0.0 ? 1.0 : (w[k] < 0.0 ? -1.0 : 0.0);
        g[k] += model.l1 * sign + 2.0 * model.l2 * w[k];
      }
    }
  }
  return grads;
}

double penalty(const MLPModel& model) {
  if (model.l1 == 0.0 && model.l2 == 0.0) return 0.0;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (const auto& layer : model.layers) {
    for (double w : layer.weights.data()) {
      abs_sum += std::abs(w);
      sq_sum += w * w;
    }
  }
  return model.l1 * abs_sum + model.l2 * sq_sum;
}

AdamOptimizer::AdamOptimizer(const MLPModel& model, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      m_(zeros_like(model)), v_(zeros_like(model)) {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
}

void AdamOptimizer::step(MLPModel& model, const Gradients& grads) {
  if (grads.weights.size() != model.layers.size() || m_.weights.size() != model.layers.size()) {
    throw DimensionError("gradient layer count does not match model");
  }
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (grads.weights[li].rows() != model.layers[li].out() ||
        grads.weights[li].cols() != model.layers[li].in() ||
        grads.biases[li].size() != model.layers[li].out()) {
      throw DimensionError("gradient shape mismatch in layer " + std::to_string(li));
    }
    for (double g : grads.weights[li].data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in layer " + std::to_string(li) + " weights");
    }
    for (double g : grads.biases[li]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in layer " + std::to_string(li) + " biases");
    }
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  auto update = [&](std::vector<double>& param, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t k = 0; k < param.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      param[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  };
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    update(model.layers[li].weights.data(), grads.weights[li].data(), m_.weights[li].data(),
           v_.weights[li].data());
    update(model.layers[li].biases, grads.biases[li], m_.biases[li], v_.biases[li]);
  }
  ++model.version;
}

}  // namespace gustuq::nn
