#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gustuq/common.hpp"
#include "gustuq/evidential.hpp"

namespace gustuq::tune {

struct RealRange {
  double low;
  double high;
};

struct IntRange {
  std::size_t low;
  std::size_t high;
};

/// Search space; the defaults are the published bounds. Learning rate,
/// batch size, lambda, l1 and l2 are log-uniform; dropout, layers and
/// units are uniform.
struct HyperSpace {
  RealRange learning_rate{1e-6, 0.01};
  RealRange dropout{0.0, 0.5};
  IntRange hidden_layers{1, 5};
  IntRange hidden_units{1, 1000};
  IntRange batch_size{10, 20000};
  RealRange lambda{1e-5, 100.0};
  RealRange l1{1e-12, 0.01};
  RealRange l2{1e-12, 0.01};

  void validate() const;
  bool contains(const evidential::TrainConfig& c) const;
};

/// One independent draw per dimension. Only the hyperparameter fields of the
/// returned config are set; the rest keep their defaults.
evidential::TrainConfig sample(const HyperSpace& space, Rng& rng);

enum class TrialStatus { Ok, Failed };

struct TrialResult {
  std::size_t id = 0;
  evidential::TrainConfig config;
  TrialStatus status = TrialStatus::Ok;
  double val_mae = 0.0;
  double val_r2_rmse_sigma_total = 0.0;  // NaN (treated as -inf) when undefined
  double val_pitd_skill = 0.0;
  std::size_t epochs = 0;
  double wall_seconds = 0.0;
  std::string message;
};

/// a dominates b: no worse on (min MAE, max R2, max PITD skill) and better on one.
bool dominates(const TrialResult& a, const TrialResult& b);
/// Ids of the non-dominated successful trials, ascending.
std::vector<std::size_t> pareto_front(const std::vector<TrialResult>& trials);

/// mae - weight * (r2 + pitd_skill); +inf when R2 is undefined.
double scalarized(const TrialResult& t, double weight);

struct SearchOptions {
  std::size_t n_trials = 500;
  std::uint64_t seed = 0;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double weight = 0.5;
  std::size_t threads = 1;
  /// Append-only trial log; completed trials found here are reused.
  std::optional<std::filesystem::path> log_path;
};

struct SearchResult {
  std::vector<TrialResult> trials;        // by id
  std::vector<std::size_t> pareto;
  std::size_t recommended = 0;
};

/// Trial i samples from a stream derived from (seed, i), trains on `train`
/// and scores on `validation`. Trials whose loss goes non-finite are marked
/// failed and excluded. Throws SearchFailure when every trial fails.
SearchResult search(const HyperSpace& space, const evidential::TrainingData& train,
                    const evidential::TrainingData& validation, const SearchOptions& options);

/// Scores one trained model on validation data.
TrialResult score_trial(const nn::MLPModel& model, const evidential::TrainingData& validation);

std::string trials_log_header();
std::string trial_log_line(const TrialResult& t);
std::vector<TrialResult> read_trials_log(const std::string& text);
std::string pareto_csv(const SearchResult& result);

}  // namespace gustuq::tune
