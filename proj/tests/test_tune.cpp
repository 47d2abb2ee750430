#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "gustuq/common.hpp"
#include "gustuq/error.hpp"
#include "gustuq/tune.hpp"
#include "support.hpp"

using namespace gustuq;
using namespace gustuq::tune;

namespace {

double r2_key(double r2) { return std::isnan(r2) ? -std::numeric_limits<double>::infinity() : r2; }

// O(n^2) reference: keep every ok trial that no other ok trial beats.
std::vector<std::size_t> brute_force_front(const std::vector<TrialResult>& trials) {
  std::vector<std::size_t> ids;
  for (const auto& a : trials) {
    if (a.status != TrialStatus::Ok) continue;
    bool beaten = false;
    for (const auto& b : trials) {
      if (b.status != TrialStatus::Ok || &a == &b) continue;
      const bool no_worse = b.val_mae <= a.val_mae && r2_key(b.val_r2_rmse_sigma_total) >= r2_key(a.val_r2_rmse_sigma_total) &&
                            b.val_pitd_skill >= a.val_pitd_skill;
      const bool better = b.val_mae < a.val_mae || r2_key(b.val_r2_rmse_sigma_total) > r2_key(a.val_r2_rmse_sigma_total) ||
                          b.val_pitd_skill > a.val_pitd_skill;
      if (no_worse && better) beaten = true;
    }
    if (!beaten) ids.push_back(a.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<TrialResult> random_trials(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrialResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = i;
    // Coarse values so ties and exact duplicates occur.
    out[i].val_mae = std::round(10.0 * u(rng)) / 10.0;
    out[i].val_r2_rmse_sigma_total = u(rng) < 0.05 ? std::nan("") : std::round(10.0 * u(rng)) / 10.0 - 0.5;
    out[i].val_pitd_skill = std::round(10.0 * u(rng)) / 10.0;
    if (u(rng) < 0.1) out[i].status = TrialStatus::Failed;
  }
  return out;
}

}  // namespace

TEST_CASE("samples stay within the default bounds") {
  const HyperSpace space;
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto c = sample(space, rng);
    CHECK(space.contains(c));
  }
}

TEST_CASE("learning-rate draws are log-uniform") {
  const HyperSpace space;
  Rng rng(2);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double lr = sample(space, rng).learning_rate;
    lo = std::min(lo, lr);
    hi = std::max(hi, lr);
  }
  CHECK(std::log10(hi / lo) >= 3.0);
}

TEST_CASE("seeded sampling is reproducible") {
  const HyperSpace space;
  Rng a(3), b(3);
  for (int i = 0; i < 50; ++i) {
    const auto x = sample(space, a), y = sample(space, b);
    CHECK(x.learning_rate == y.learning_rate);
    CHECK(x.hidden_units == y.hidden_units);
    CHECK(x.batch_size == y.batch_size);
    CHECK(x.l2 == y.l2);
  }
}

TEST_CASE("invalid spaces are configuration errors") {
  HyperSpace s;
  s.learning_rate = {0.0, 0.01};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = HyperSpace{};
  s.hidden_layers = {3, 2};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("Pareto front equals the brute-force dominance filter") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto trials = random_trials(50, seed);
    CHECK(pareto_front(trials) == brute_force_front(trials));
  }
}

TEST_CASE("Pareto front is independent of trial order") {
  auto trials = random_trials(60, 7);
  const auto front = pareto_front(trials);
  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(trials.begin(), trials.end(), rng);
    CHECK(pareto_front(trials) == front);
  }
}

TEST_CASE("dominated trials never appear on the front") {
  TrialResult a, b;
  a.id = 0;
  a.val_mae = 1.0;
  a.val_r2_rmse_sigma_total = 0.5;
  a.val_pitd_skill = 0.9;
  b = a;
  b.id = 1;
  b.val_mae = 1.1;
  CHECK(dominates(a, b));
  CHECK_FALSE(dominates(b, a));
  CHECK_FALSE(dominates(a, a));
  CHECK(pareto_front({a, b}) == std::vector<std::size_t>{0});
}

TEST_CASE("scalarization") {
  TrialResult t;
  t.val_mae = 1.0;
  t.val_r2_rmse_sigma_total = 0.4;
  t.val_pitd_skill = 0.8;
  CHECK(scalarized(t, 0.5) == doctest::Approx(1.0 - 0.5 * 1.2));
  t.val_r2_rmse_sigma_total = std::nan("");
  CHECK(std::isinf(scalarized(t, 0.5)));
}

TEST_CASE("trials log round trip") {
  const HyperSpace space;
  Rng rng(4);
  TrialResult t;
  t.id = 12;
  t.config = sample(space, rng);
  t.val_mae = 0.123456789012345;
  t.val_r2_rmse_sigma_total = std::nan("");
  t.val_pitd_skill = 0.97;
  t.epochs = 33;
  t.message = "";
  TrialResult f = t;
  f.id = 13;
  f.status = TrialStatus::Failed;
  f.message = "loss became non-finite";
  const auto back = read_trials_log(trials_log_header() + trial_log_line(t) + trial_log_line(f));
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == 12);
  CHECK(back[0].config.learning_rate == t.config.learning_rate);
  CHECK(back[0].config.l1 == t.config.l1);
  CHECK(back[0].config.batch_size == t.config.batch_size);
  CHECK(back[0].val_mae == t.val_mae);
  CHECK(std::isnan(back[0].val_r2_rmse_sigma_total));
  CHECK(back[1].status == TrialStatus::Failed);
  CHECK(back[1].message == f.message);
}

namespace {

HyperSpace narrow_space() {
  HyperSpace s;
  s.learning_rate = {3e-4, 3e-3};
  s.dropout = {0.0, 0.05};
  s.hidden_layers = {1, 2};
  s.hidden_units = {16, 48};
  s.batch_size = {32, 128};
  s.lambda = {1e-4, 1e-2};
  s.l1 = {1e-12, 1e-7};
  s.l2 = {1e-12, 1e-7};
  return s;
}

}  // namespace

TEST_CASE("a single trial is both front and recommendation") {
  const auto tr = testing::heteroscedastic(200, 1);
  const auto va = testing::heteroscedastic(100, 2);
  SearchOptions opt;
  opt.n_trials = 1;
  opt.max_epochs = 5;
  const auto r = search(narrow_space(), {tr.x, tr.y}, {va.x, va.y}, opt);
  REQUIRE(r.trials.size() == 1);
  CHECK(r.pareto == std::vector<std::size_t>{0});
  CHECK(r.recommended == 0);
  CHECK(pareto_csv(r).rfind("# objectives:", 0) == 0);
}

TEST_CASE("search resumes from its log") {
  const auto tr = testing::heteroscedastic(200, 1);
  const auto va = testing::heteroscedastic(100, 2);
  const auto dir = testing::fresh_dir("tune_resume");
  SearchOptions opt;
  opt.n_trials = 3;
  opt.max_epochs = 3;
  opt.seed = 5;
  opt.log_path = dir / "trials.csv";
  const auto first = search(narrow_space(), {tr.x, tr.y}, {va.x, va.y}, opt);
  opt.n_trials = 5;
  const auto second = search(narrow_space(), {tr.x, tr.y}, {va.x, va.y}, opt);
  REQUIRE(second.trials.size() == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(second.trials[i].val_mae == first.trials[i].val_mae);
    CHECK(second.trials[i].wall_seconds == first.trials[i].wall_seconds);
  }
  const auto log = read_trials_log(testing::slurp(*opt.log_path));
  CHECK(log.size() == 5);

  // A different seed cannot reuse the same log.
  opt.seed = 6;
  CHECK_THROWS_AS(search(narrow_space(), {tr.x, tr.y}, {va.x, va.y}, opt), ConfigError);
}

TEST_CASE("50-trial search reaches the noise floor on the heteroscedastic task") {
  const auto tr = testing::heteroscedastic(1500, 21);
  const auto va = testing::heteroscedastic(1000, 22);
  // Median of N(f, s^2) is f, so the best achievable MAE is E[s] sqrt(2/pi) with E[s] = 0.6.
  const double floor = 0.6 * std::sqrt(2.0 / std::numbers::pi);
  SearchOptions opt;
  opt.n_trials = 50;
  opt.max_epochs = 60;
  opt.patience = 10;
  opt.seed = 17;
  const auto r = search(narrow_space(), {tr.x, tr.y}, {va.x, va.y}, opt);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : r.trials) {
    if (t.status == TrialStatus::Ok) best = std::min(best, t.val_mae);
  }
  MESSAGE("best val_mae " << best << " floor " << floor);
  CHECK(best <= 1.2 * floor);
  CHECK(r.pareto == brute_force_front(r.trials));
}
