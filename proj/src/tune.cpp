#include "gustuq/tune.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "gustuq/csv.hpp"
#include "gustuq/metrics.hpp"

namespace gustuq::tune {

namespace {

double log_uniform(const RealRange& r, Rng& rng) {
  const double lo = std::log(r.low);
  const double hi = std::log(r.high);
  return std::exp(lo + (hi - lo) * uniform01(rng));
}

std::size_t uniform_int(const IntRange& r, Rng& rng) {
  const auto span = static_cast<double>(r.high - r.low + 1);
  return std::min(r.high, r.low + static_cast<std::size_t>(uniform01(rng) * span));
}

double objective_r2(const TrialResult& t) {
  return std::isnan(t.val_r2_rmse_sigma_total) ? -std::numeric_limits<double>::infinity()
                                               : t.val_r2_rmse_sigma_total;
}

}  // namespace

void HyperSpace::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid search range for ") + what);
  };
  check(learning_rate.low > 0 && learning_rate.low <= learning_rate.high, "learning_rate");
  check(dropout.low >= 0 && dropout.low <= dropout.high && dropout.high <= 0.5, "dropout");
  check(hidden_layers.low <= hidden_layers.high, "hidden_layers");
  check(hidden_units.low >= 1 && hidden_units.low <= hidden_units.high, "hidden_units");
  check(batch_size.low >= 1 && batch_size.low <= batch_size.high, "batch_size");
  check(lambda.low > 0 && lambda.low <= lambda.high, "lambda");
  check(l1.low > 0 && l1.low <= l1.high, "l1");
  check(l2.low > 0 && l2.low <= l2.high, "l2");
}

bool HyperSpace::contains(const evidential::TrainConfig& c) const {
  auto in = [](double v, const RealRange& r) { return v >= r.low && v <= r.high; };
  auto in_int = [](std::size_t v, const IntRange& r) { return v >= r.low && v <= r.high; };
  return in(c.learning_rate, learning_rate) && in(c.dropout, dropout) && in_int(c.hidden_layers, hidden_layers) &&
         in_int(c.hidden_units, hidden_units) && in_int(c.batch_size, batch_size) && in(c.lambda, lambda) &&
         in(c.l1, l1) && in(c.l2, l2);
}

evidential::TrainConfig sample(const HyperSpace& space, Rng& rng) {
  evidential::TrainConfig c;
  c.learning_rate = std::clamp(log_uniform(space.learning_rate, rng), space.learning_rate.low, space.learning_rate.high);
  c.dropout = space.dropout.low + (space.dropout.high - space.dropout.low) * uniform01(rng);
  c.hidden_layers = uniform_int(space.hidden_layers, rng);
  c.hidden_units = uniform_int(space.hidden_units, rng);
  const double b = std::round(log_uniform({static_cast<double>(space.batch_size.low),
                                           static_cast<double>(space.batch_size.high)},
                                          rng));
  c.batch_size = std::clamp(static_cast<std::size_t>(b), space.batch_size.low, space.batch_size.high);
  c.lambda = std::clamp(log_uniform(space.lambda, rng), space.lambda.low, space.lambda.high);
  c.l1 = std::clamp(log_uniform(space.l1, rng), space.l1.low, space.l1.high);
  c.l2 = std::clamp(log_uniform(space.l2, rng), space.l2.low, space.l2.high);
  return c;
}

bool dominates(const TrialResult& a, const TrialResult& b) {
  const double ar = objective_r2(a);
  const double br = objective_r2(b);
  const bool no_worse = a.val_mae <= b.val_mae && ar >= br && a.val_pitd_skill >= b.val_pitd_skill;
  const bool better = a.val_mae < b.val_mae || ar > br || a.val_pitd_skill > b.val_pitd_skill;
  return no_worse && better;
}

std::vector<std::size_t> pareto_front(const std::vector<TrialResult>& trials) {
  std::vector<const TrialResult*> ok;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::Ok) ok.push_back(&t);
  }
  // Lexicographic (MAE asc, R2 desc, skill desc): no later entry can dominate
  // an earlier one, so one sweep against the running front suffices.
  std::sort(ok.begin(), ok.end(), [](const TrialResult* a, const TrialResult* b) {
    if (a->val_mae != b->val_mae) return a->val_mae < b->val_mae;
    if (objective_r2(*a) != objective_r2(*b)) return objective_r2(*a) > objective_r2(*b);
    if (a->val_pitd_skill != b->val_pitd_skill) return a->val_pitd_skill > b->val_pitd_skill;
    return a->id < b->id;
  });
  std::vector<const TrialResult*> front;
  for (const auto* t : ok) {
    const bool dominated =
        std::any_of(front.begin(), front.end(), [&](const TrialResult* f) { return dominates(*f, *t); });
    if (!dominated) front.push_back(t);
  }
  std::vector<std::size_t> ids;
  for (const auto* f : front) ids.push_back(f->id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

double scalarized(const TrialResult& t, double weight) {
  if (std::isnan(t.val_r2_rmse_sigma_total)) return std::numeric_limits<double>::infinity();
  return t.val_mae - weight * (t.val_r2_rmse_sigma_total + t.val_pitd_skill);
}

TrialResult score_trial(const nn::MLPModel& model, const evidential::TrainingData& validation) {
  const auto preds = evidential::predict(model, validation.features);
  const std::size_t n = preds.size();
  std::vector<double> sd(n), err(n);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sd[i] = preds[i].total_sd;
    err[i] = preds[i].mean - validation.targets[i];
    abs_sum += std::abs(err[i]);
  }
  TrialResult r;
  r.val_mae = abs_sum / static_cast<double>(n);
  r.val_r2_rmse_sigma_total = metrics::spread_skill(sd, err, 20).r2;
  const auto pit = metrics::pit_values(preds, validation.targets, metrics::UncertaintyKind::Total);
  r.val_pitd_skill = metrics::pitd(pit, 10).skill;
  return r;
}

std::string trials_log_header() {
  return "trial_id,status,learning_rate,dropout,hidden_layers,hidden_units,batch_size,lambda,l1,l2,"
         "val_mae,val_r2_rmse_sigma_total,val_pitd_skill,epochs,wall_seconds,message\n";
}

std::string trial_log_line(const TrialResult& t) {
  std::string msg = t.message;
  std::replace(msg.begin(), msg.end(), ',', ';');
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::ostringstream out;
  const auto& c = t.config;
  out << t.id << ',' << (t.status == TrialStatus::Ok ? "ok" : "failed") << ',' << format_double(c.learning_rate)
      << ',' << format_double(c.dropout) << ',' << c.hidden_layers << ',' << c.hidden_units << ','
      << c.batch_size << ',' << format_double(c.lambda) << ',' << format_double(c.l1) << ','
      << format_double(c.l2) << ',' << format_double(t.val_mae) << ',' << format_double(t.val_r2_rmse_sigma_total)
      << ',' << format_double(t.val_pitd_skill) << ',' << t.epochs << ',' << format_double(t.wall_seconds) << ','
      << msg << '\n';
  return out.str();
}

std::vector<TrialResult> read_trials_log(const std::string& text) {
  const CsvTable table = parse_csv(text);
  auto col = [&](const char* name) { return table.require(name); };
  const std::size_t i_id = col("trial_id"), i_status = col("status"), i_lr = col("learning_rate"),
                    i_do = col("dropout"), i_hl = col("hidden_layers"), i_hu = col("hidden_units"),
                    i_bs = col("batch_size"), i_lam = col("lambda"), i_l1 = col("l1"), i_l2 = col("l2"),
                    i_mae = col("val_mae"), i_r2 = col("val_r2_rmse_sigma_total"),
                    i_pitd = col("val_pitd_skill"), i_ep = col("epochs"), i_wall = col("wall_seconds"),
                    i_msg = col("message");
  std::vector<TrialResult> out;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    auto num = [&](std::size_t i) {
      double v = 0.0;
      if (row[i] == "nan" || row[i] == "-nan") return std::numeric_limits<double>::quiet_NaN();
      if (!parse_double(row[i], v)) {
        throw IngestError("trials log line " + std::to_string(table.line_numbers[k]) + ": bad value '" +
                          row[i] + "'");
      }
      return v;
    };
    TrialResult t;
    t.id = static_cast<std::size_t>(num(i_id));
    t.status = row[i_status] == "ok" ? TrialStatus::Ok : TrialStatus::Failed;
    t.config.learning_rate = num(i_lr);
    t.config.dropout = num(i_do);
    t.config.hidden_layers = static_cast<std::size_t>(num(i_hl));
    t.config.hidden_units = static_cast<std::size_t>(num(i_hu));
    t.config.batch_size = static_cast<std::size_t>(num(i_bs));
    t.config.lambda = num(i_lam);
    t.config.l1 = num(i_l1);
    t.config.l2 = num(i_l2);
    t.val_mae = num(i_mae);
    t.val_r2_rmse_sigma_total = num(i_r2);
    t.val_pitd_skill = num(i_pitd);
    t.epochs = static_cast<std::size_t>(num(i_ep));
    t.wall_seconds = num(i_wall);
    t.message = row[i_msg];
    out.push_back(t);
  }
  return out;
}

namespace {

bool same_hyperparameters(const evidential::TrainConfig& a, const evidential::TrainConfig& b) {
  return a.learning_rate == b.learning_rate && a.dropout == b.dropout && a.hidden_layers == b.hidden_layers &&
         a.hidden_units == b.hidden_units && a.batch_size == b.batch_size && a.lambda == b.lambda &&
         a.l1 == b.l1 && a.l2 == b.l2;
}

TrialResult run_trial(std::size_t id, const HyperSpace& space, const evidential::TrainingData& train,
                      const evidential::TrainingData& validation, const SearchOptions& options) {
  Rng rng(derive_seed(options.seed, id));
  evidential::TrainConfig config = sample(space, rng);
  config.max_epochs = options.max_epochs;
  config.patience = options.patience;
  config.seed = derive_seed(options.seed ^ 0xA5A5A5A5A5A5A5A5ULL, id);

  const auto start = std::chrono::steady_clock::now();
  TrialResult r;
  try {
    const auto trained = evidential::train_evidential(train, validation, config);
    r = score_trial(trained.model, validation);
    r.epochs = trained.log.size();
    if (!std::isfinite(r.val_mae)) {
      r.status = TrialStatus::Failed;
      r.message = "non-finite validation MAE";
    }
  } catch (const NumericError& e) {
    r.status = TrialStatus::Failed;
    r.message = e.what();
  }
  r.id = id;
  r.config = config;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

SearchResult search(const HyperSpace& space, const evidential::TrainingData& train,
                    const evidential::TrainingData& validation, const SearchOptions& options) {
  space.validate();
  if (options.n_trials < 1) throw ConfigError("search budget must be at least one trial");

  std::map<std::size_t, TrialResult> done;
  if (options.log_path && std::filesystem::exists(*options.log_path)) {
    for (auto& t : read_trials_log(read_file(*options.log_path))) {
      if (t.id >= options.n_trials) continue;
      Rng rng(derive_seed(options.seed, t.id));
      if (!same_hyperparameters(sample(space, rng), t.config)) {
        throw ConfigError("trials log entry " + std::to_string(t.id) +
                          " does not match this seed and search space");
      }
      done[t.id] = t;
    }
  }

  std::ofstream log;
  if (options.log_path) {
    const bool fresh = !std::filesystem::exists(*options.log_path);
    if (options.log_path->has_parent_path()) std::filesystem::create_directories(options.log_path->parent_path());
    log.open(*options.log_path, std::ios::app);
    if (!log) throw UsageError("cannot open trials log " + options.log_path->string());
    if (fresh) log << trials_log_header() << std::flush;
  }

  std::vector<std::size_t> pending;
  for (std::size_t id = 0; id < options.n_trials; ++id) {
    if (!done.count(id)) pending.push_back(id);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      try {
        TrialResult r = run_trial(pending[k], space, train, validation, options);
        std::lock_guard lock(mu);
        if (log.is_open()) log << trial_log_line(r) << std::flush;
        done[r.id] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        next = pending.size();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, pending.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  SearchResult result;
  for (auto& [id, t] : done) result.trials.push_back(t);
  result.pareto = pareto_front(result.trials);
  if (result.pareto.empty()) {
    throw SearchFailure("all " + std::to_string(result.trials.size()) + " trials failed");
  }

  // Recommendation: best scalarized score on the front; undefined R2 sorts
  // last, then lower MAE, then lower id.
  const TrialResult* best = nullptr;
  for (std::size_t id : result.pareto) {
    const TrialResult& t = done.at(id);
    if (!best) {
      best = &t;
      continue;
    }
    const double s = scalarized(t, options.weight);
    const double bs = scalarized(*best, options.weight);
    if (s < bs || (s == bs && t.val_mae < best->val_mae)) best = &t;
  }
  result.recommended = best->id;
  return result;
}

std::string pareto_csv(const SearchResult& result) {
  std::ostringstream out;
  out << "# objectives: minimize val_mae, maximize val_r2_rmse_sigma_total, maximize val_pitd_skill "
         "(PITD skill score)\n";
  std::string header = trials_log_header();
  header.insert(header.size() - 1, ",recommended");
  out << header;
  for (const auto& t : result.trials) {
    if (!std::binary_search(result.pareto.begin(), result.pareto.end(), t.id)) continue;
    std::string line = trial_log_line(t);
    line.insert(line.size() - 1, t.id == result.recommended ? ",1" : ",0");
    out << line;
  }
  return out.str();
}

}  // namespace gustuq::tune
