#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gustuq/error.hpp"
#include "gustuq/xai.hpp"
#include "support.hpp"

using namespace gustuq;
using namespace gustuq::xai;

namespace {

struct LinearData {
  Matrix x;
  std::vector<double> y;
};

// y = 5 x1 + noise; x2 is irrelevant.
LinearData linear_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  LinearData d{Matrix(n, 2), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    d.x(i, 0) = z(rng);
    d.x(i, 1) = z(rng);
    d.y[i] = 5.0 * d.x(i, 0) + 0.5 * z(rng);
  }
  return d;
}

// Ordinary least squares on [1, x1, x2] through the 3x3 normal equations.
std::array<double, 3> ols(const LinearData& d) {
  double a[3][4] = {};
  for (std::size_t i = 0; i < d.y.size(); ++i) {
    const double row[3] = {1.0, d.x(i, 0), d.x(i, 1)};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a[r][c] += row[r] * row[c];
      a[r][3] += row[r] * d.y[i];
    }
  }
  for (int p = 0; p < 3; ++p) {
    for (int r = p + 1; r < 3; ++r) {
      const double f = a[r][p] / a[p][p];
      for (int c = p; c < 4; ++c) a[r][c] -= f * a[p][c];
    }
  }
  std::array<double, 3> b{};
  for (int r = 2; r >= 0; --r) {
    double s = a[r][3];
    for (int c = r + 1; c < 3; ++c) s -= a[r][c] * b[c];
    b[r] = s / a[r][r];
  }
  return b;
}

Predictor linear_predictor(std::array<double, 3> b) {
  return [b](const Matrix& x) {
    std::vector<evidential::UncertaintyDecomposition> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out[i].mean = b[0] + b[1] * x(i, 0) + b[2] * x(i, 1);
      out[i].total_sd = 0.5 + 0.1 * std::abs(x(i, 0));
    }
    return out;
  };
}

}  // namespace

TEST_CASE("PFI on held-out data ranks the dominant feature first and leaves the irrelevant one near zero") {
  const auto train = linear_data(4000, 1);
  const auto test = linear_data(1000, 101);
  const auto predict = linear_predictor(ols(train));
  PFIOptions opt;
  opt.seed = 5;
  const auto r = permutation_importance(predict, test.x, test.y, {"x1", "x2"}, opt);
  REQUIRE(r.features.size() == 2);
  CHECK(r.n_shuffles == 10);
  CHECK(r.features[0].delta_rmse.size() == 10);
  CHECK(r.features[0].mean_delta_rmse > r.features[1].mean_delta_rmse);
  CHECK(r.features[0].mean_delta_rmse > 1.0);
  CHECK(std::abs(r.features[1].mean_delta_rmse) < 2.0 * r.features[1].sd_delta_rmse);
}

TEST_CASE("identity permutations give exactly zero importance") {
  const auto d = linear_data(200, 2);
  PFIOptions opt;
  opt.permutation = [](std::size_t n, std::size_t) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
  };
  const auto r = permutation_importance(linear_predictor(ols(d)), d.x, d.y, {}, opt);
  for (const auto& f : r.features) {
    for (double v : f.delta_rmse) CHECK(v == 0.0);
    for (double v : f.delta_r2) CHECK(v == 0.0);
  }
  CHECK(r.features[0].feature == "f0");
}

TEST_CASE("PFI is reproducible and independent of column order") {
  const auto d = linear_data(300, 3);
  const auto b = ols(d);
  PFIOptions opt;
  opt.seed = 11;
  opt.n_shuffles = 4;
  const auto a = permutation_importance(linear_predictor(b), d.x, d.y, {"x1", "x2"}, opt);
  const auto again = permutation_importance(linear_predictor(b), d.x, d.y, {"x1", "x2"}, opt);
  CHECK(a.features[0].delta_rmse == again.features[0].delta_rmse);

  Matrix swapped(d.x.rows(), 2);
  swapped.set_column(0, d.x.column(1));
  swapped.set_column(1, d.x.column(0));
  const auto swapped_predict = linear_predictor({b[0], b[2], b[1]});
  const auto s = permutation_importance(swapped_predict, swapped, d.y, {"x2", "x1"}, opt);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(s.features[1].delta_rmse[k] == doctest::Approx(a.features[0].delta_rmse[k]).epsilon(1e-12));
    CHECK(s.features[0].delta_rmse[k] == doctest::Approx(a.features[1].delta_rmse[k]).epsilon(1e-9));
  }
}

TEST_CASE("constant columns report zero importance") {
  auto d = linear_data(100, 4);
  d.x.fill_column(1, 3.0);
  std::vector<std::string> warnings;
  auto old = set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
  const auto r = permutation_importance(linear_predictor(ols(linear_data(100, 4))), d.x, d.y, {"a", "b"});
  set_warning_sink(old);
  CHECK(r.features[1].constant);
  CHECK(r.features[1].mean_delta_rmse == 0.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("PDP of a linear model has the model slope and spans the observed range") {
  const auto d = linear_data(120, 5);
  const auto curve = partial_dependence(linear_predictor({0.0, 2.0, 0.0}), d.x, 0, 100, "x1");
  const auto col = d.x.column(0);
  REQUIRE(curve.grid.size() == 100);
  CHECK(curve.grid.front() == *std::min_element(col.begin(), col.end()));
  CHECK(curve.grid.back() == *std::max_element(col.begin(), col.end()));
  for (std::size_t k = 1; k < curve.grid.size(); ++k) {
    const double slope = (curve.mean_prediction[k] - curve.mean_prediction[k - 1]) / (curve.grid[k] - curve.grid[k - 1]);
    CHECK(slope == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(curve.sd_prediction[k] == doctest::Approx(0.0));
  }
}

TEST_CASE("PDP is flat when the model ignores the feature") {
  auto model = nn::make_mlp(3, 2, 8, 0.0, 0.0, 0.0, 3);
  model.layers[0].weights.fill_column(1, 0.0);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix x(40, 3);
  for (auto& v : x.data()) v = z(rng);
  const auto curve = partial_dependence(make_predictor(model), x, 1, 25);
  for (std::size_t k = 1; k < curve.grid.size(); ++k) {
    CHECK(curve.mean_prediction[k] == curve.mean_prediction[0]);
    CHECK(curve.mean_total_sd[k] == curve.mean_total_sd[0]);
  }
}

TEST_CASE("PDP equals the row-by-row brute-force mean") {
  const auto model = nn::make_mlp(4, 2, 16, 0.0, 0.0, 0.0, 8);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix x(50, 4);
  for (auto& v : x.data()) v = z(rng);
  const auto curve = partial_dependence(make_predictor(model), x, 2, 30);
  for (std::size_t k = 0; k < curve.grid.size(); ++k) {
    double sum_mean = 0.0, sum_sd = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      Matrix one = x.slice_rows(i, i + 1);
      one(0, 2) = curve.grid[k];
      const auto p = evidential::predict(model, one);
      sum_mean += p[0].mean;
      sum_sd += p[0].total_sd;
    }
    CHECK(curve.mean_prediction[k] == sum_mean / 50.0);
    CHECK(curve.mean_total_sd[k] == sum_sd / 50.0);
  }
}

TEST_CASE("PDP on a zero-range feature collapses to one point") {
  Matrix x(10, 2, 1.0);
  x(3, 0) = 2.0;
  auto old = set_warning_sink([](std::string_view) {});
  const auto curve = partial_dependence(linear_predictor({0.0, 1.0, 1.0}), x, 1, 100);
  set_warning_sink(old);
  CHECK(curve.grid.size() == 1);
  CHECK_THROWS_AS(partial_dependence(linear_predictor({0, 1, 1}), x, 5, 10), UsageError);
}

TEST_CASE("CSV outputs carry both metrics") {
  const auto d = linear_data(60, 9);
  PFIOptions opt;
  opt.n_shuffles = 2;
  const auto r = permutation_importance(linear_predictor(ols(d)), d.x, d.y, {"x1", "x2"}, opt);
  const auto summary = pfi_summary_csv(r);
  CHECK(summary.find("mean_delta_rmse") != std::string::npos);
  CHECK(summary.find("mean_delta_r2_rmse_sigma_total") != std::string::npos);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
  const auto shuffles = pfi_shuffles_csv(r);
  CHECK(std::count(shuffles.begin(), shuffles.end(), '\n') == 5);
}
