#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <random>
#include <sstream>

#include "gustuq/cli.hpp"
#include "gustuq/common.hpp"
#include "gustuq/csv.hpp"
#include "gustuq/error.hpp"
#include "support.hpp"

using namespace gustuq;
namespace fs = std::filesystem;

namespace {

const std::string kBin = GUSTUQ_BIN;

std::string bin(const std::string& args) { return kBin + " " + args; }

std::string keep_storms(const std::string& text, const std::vector<std::string>& storms) {
  std::istringstream in(text);
  std::string line, out;
  std::getline(in, line);
  out = line + "\n";
  while (std::getline(in, line)) {
    for (const auto& s : storms) {
      if (line.rfind(s + ",", 0) == 0) out += line + "\n";
    }
  }
  return out;
}

double cell(const CsvTable& t, std::size_t row, const std::string& col) {
  double v = 0.0;
  REQUIRE(parse_double(t.rows[row][t.require(col)], v));
  return v;
}

// Trains a tiny model into dir/model from a five-storm station table.
fs::path train_small(const fs::path& dir, int seed = 3) {
  testing::write_text(dir / "stations.csv", testing::station_csv(5, 6, 4, 11));
  const int rc = testing::run_command(bin("train --data " + (dir / "stations.csv").string() + " --out " +
                                          (dir / "model").string() + " --max-epochs 4 --seed " + std::to_string(seed)));
  REQUIRE(rc == 0);
  return dir / "model";
}

}  // namespace

TEST_CASE("train writes its artifacts and predict reproduces validation predictions") {
  const auto dir = testing::fresh_dir("cli_roundtrip");
  const auto model = train_small(dir);
  for (const char* f : {"model.json", "epoch_log.csv", "split.json", "validation_predictions.csv",
                        "validation_report.json"}) {
    CHECK(fs::exists(model / f));
  }
  const auto split = nlohmann::json::parse(testing::slurp(model / "split.json"));
  CHECK(split["train"].size() == 3);
  CHECK(split["validation"].size() == 1);
  CHECK(split["test"].size() == 1);

  const std::vector<std::string> val = split["validation"].get<std::vector<std::string>>();
  testing::write_text(dir / "val.csv", keep_storms(testing::slurp(dir / "stations.csv"), val));
  REQUIRE(testing::run_command(bin("predict --data " + (dir / "val.csv").string() + " --model " +
                                   (model / "model.json").string() + " --out " + (dir / "pred").string())) == 0);
  CHECK(testing::slurp(dir / "pred" / "predictions.csv") == testing::slurp(model / "validation_predictions.csv"));
}

TEST_CASE("same seed gives byte-identical artifacts") {
  const auto a = train_small(testing::fresh_dir("cli_seed_a"));
  const auto b = train_small(testing::fresh_dir("cli_seed_b"));
  for (const char* f : {"model.json", "validation_predictions.csv", "validation_report.json", "split.json"}) {
    CHECK(testing::slurp(a / f) == testing::slurp(b / f));
  }
  const auto c = train_small(testing::fresh_dir("cli_seed_c"), 4);
  CHECK(testing::slurp(a / "model.json") != testing::slurp(c / "model.json"));
}

TEST_CASE("missing target column is an ingest error") {
  const auto dir = testing::fresh_dir("cli_notarget");
  testing::write_text(dir / "x.csv", testing::station_csv(3, 2, 2, 1, false));
  int rc = 0;
  const auto err = testing::capture_stderr(
      bin("train --data " + (dir / "x.csv").string() + " --out " + (dir / "o").string()), &rc);
  CHECK(rc == 1);
  CHECK(err.find("error: IngestError") != std::string::npos);
  CHECK(err.find("gust_obs") != std::string::npos);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(testing::run_command(bin("train --no-such-flag 1")) == 2);
  CHECK(testing::run_command(bin("")) == 2);
}

TEST_CASE("prediction intervals and the uncertainty mask") {
  const auto dir = testing::fresh_dir("cli_intervals");
  const auto model = train_small(dir);
  const auto t = parse_csv(testing::slurp(model / "validation_predictions.csv"));
  const std::size_t n = t.rows.size();
  REQUIRE(n > 0);
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = cell(t, i, "mean"), sd = cell(t, i, "total_sd");
    CHECK(cell(t, i, "upper_0.95") - mu == doctest::Approx(1.96 * sd).epsilon(1e-12));
    CHECK(cell(t, i, "upper_0.95") - cell(t, i, "lower_0.95") == doctest::Approx(2.0 * 1.96 * sd).epsilon(1e-12));
    CHECK(cell(t, i, "upper_0.7") - mu == doctest::Approx(1.04 * sd).epsilon(1e-12));
    CHECK(sd * sd == doctest::Approx(std::pow(cell(t, i, "aleatoric_sd"), 2) + std::pow(cell(t, i, "epistemic_sd"), 2)));
    flagged += cell(t, i, "highly_uncertain") == 1.0;
  }
  CHECK(static_cast<double>(flagged) / static_cast<double>(n) <= 0.05 + 1.0 / static_cast<double>(n));
}

TEST_CASE("schema mismatches are reported as a column diff") {
  const auto dir = testing::fresh_dir("cli_schema");
  const auto model = train_small(dir);
  std::string text = testing::slurp(dir / "stations.csv");
  text.replace(text.find("PBLH"), 4, "PBL_height");
  testing::write_text(dir / "bad.csv", text);
  int rc = 0;
  const auto err = testing::capture_stderr(bin("predict --data " + (dir / "bad.csv").string() + " --model " +
                                                (model / "model.json").string() + " --out " + (dir / "p").string()),
                                            &rc);
  CHECK(rc == 1);
  CHECK(err.find("SchemaError") != std::string::npos);
  CHECK(err.find("PBLH") != std::string::npos);
  CHECK(err.find("PBL_height") != std::string::npos);
}

TEST_CASE("a constant grid gives a constant mean and zero gradient") {
  const auto dir = testing::fresh_dir("cli_grid");
  const auto model = train_small(dir);
  std::ostringstream g;
  g << "storm_id,timestamp_utc,row,col,lat,lon,WS_10m,WS_850mb,WS_950mb,PBLH,Ustar,wind_dir_deg,"
       "terrain_height_m,lapse_sfc_1km,lapse_sfc_2km\n";
  for (int h = 0; h < 2; ++h) {
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 5; ++c) {
        g << "G," << "2021-03-01T0" << h << ":00:00Z," << r << ',' << c << ',' << 40 + 0.25 * r << ','
          << -76 + 0.25 * c << ",8,11,10,900,0.6,200,150,-6.5,-6\n";
      }
    }
  }
  testing::write_text(dir / "grid.csv", g.str());
  const int rc = testing::run_command(bin("predict --layout grid --data " + (dir / "grid.csv").string() +
                                          " --model " + (model / "model.json").string() + " --out " +
                                          (dir / "gp").string()));
  REQUIRE(rc == 0);
  const auto p = parse_csv(testing::slurp(dir / "gp" / "predictions.csv"));
  REQUIRE(p.rows.size() == 40);
  for (std::size_t i = 1; i < p.rows.size(); ++i) CHECK(cell(p, i, "mean") == cell(p, 0, "mean"));
  const auto grad = parse_csv(testing::slurp(dir / "gp" / "gradient.csv"));
  REQUIRE(grad.rows.size() == 40);
  for (std::size_t i = 0; i < grad.rows.size(); ++i) CHECK(cell(grad, i, "gradient") == 0.0);
}

TEST_CASE("evaluate: perfect predictions cover every observation") {
  const auto dir = testing::fresh_dir("cli_eval_perfect");
  const auto data = testing::station_csv(2, 5, 3, 21);
  testing::write_text(dir / "obs.csv", data);
  const auto obs = parse_csv(data);
  std::ostringstream p;
  p << "storm_id,timestamp_utc,station_id,lat,lon,mean,aleatoric_sd,epistemic_sd,total_sd\n";
  for (std::size_t i = 0; i < obs.rows.size(); ++i) {
    const auto& r = obs.rows[i];
    p << r[0] << ',' << r[1] << ',' << r[2] << ',' << r[3] << ',' << r[4] << ',' << r[obs.require("gust_obs")]
      << ",0.3,0.4," << format_double(0.5 + 0.01 * static_cast<double>(i)) << '\n';
  }
  testing::write_text(dir / "pred.csv", p.str());
  REQUIRE(testing::run_command(bin("evaluate --data " + (dir / "obs.csv").string() + " --predictions " +
                                   (dir / "pred.csv").string() + " --out " + (dir / "ev").string())) == 0);
  const auto report = nlohmann::json::parse(testing::slurp(dir / "ev" / "report.json"));
  CHECK(report["mae"].get<double>() == 0.0);
  for (const auto& c : report["picp"]) CHECK(c["picp"].get<double>() == 1.0);

  const auto by_station = parse_csv(testing::slurp(dir / "ev" / "picp_by_station.csv"));
  CHECK(by_station.rows.size() == 3 * 4);
  std::map<std::string, int> rows_per_station;
  for (const auto& r : by_station.rows) ++rows_per_station[r[0]];
  for (const auto& [s, k] : rows_per_station) CHECK(k == 4);
  for (std::size_t i = 0; i < by_station.rows.size(); ++i) {
    if (cell(by_station, i, "n_used") > 0) CHECK(cell(by_station, i, "picp") == 1.0);
  }
}

TEST_CASE("evaluate: global PICP on calibrated Monte Carlo predictions") {
  const auto dir = testing::fresh_dir("cli_eval_mc");
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::size_t n = 5000;
  std::ostringstream obs, pred;
  obs << "station_id,timestamp_utc,gust_obs\n";
  pred << "storm_id,timestamp_utc,station_id,lat,lon,mean,aleatoric_sd,epistemic_sd,total_sd\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double sd = u(rng);
    const double mu = 10.0 + z(rng);
    const std::string st = "ST" + std::to_string(i % 50);
    char ts[32];
    std::snprintf(ts, sizeof ts, "2020-01-%02zuT%02zu:00:00Z", 1 + i / 50 / 24, (i / 50) % 24);
    obs << st << ',' << ts << ',' << format_double(mu + sd * z(rng)) << '\n';
    pred << "A," << ts << ',' << st << ",41,-75," << format_double(mu) << ',' << format_double(sd) << ",0,"
         << format_double(sd) << '\n';
  }
  testing::write_text(dir / "obs.csv", obs.str());
  testing::write_text(dir / "pred.csv", pred.str());
  REQUIRE(testing::run_command(bin("evaluate --levels 0.9,0.95 --data " + (dir / "obs.csv").string() +
                                   " --predictions " + (dir / "pred.csv").string() + " --out " +
                                   (dir / "ev").string())) == 0);
  const auto report = nlohmann::json::parse(testing::slurp(dir / "ev" / "report.json"));
  REQUIRE(report["picp"].size() == 2);
  const double used = 0.95 * static_cast<double>(n);
  for (const auto& c : report["picp"]) {
    const double level = c["level"].get<double>();
    const double band = 4.0 * std::sqrt(level * (1.0 - level) / used);
    CHECK(std::abs(c["picp"].get<double>() - level) < band);
  }
}

TEST_CASE("evaluate: an empty join lists unmatched keys") {
  const auto dir = testing::fresh_dir("cli_eval_join");
  testing::write_text(dir / "obs.csv", "station_id,timestamp_utc,gust_obs\nA,2020-01-01T00:00:00Z,3\n");
  testing::write_text(dir / "pred.csv",
                      "storm_id,timestamp_utc,station_id,lat,lon,mean,aleatoric_sd,epistemic_sd,total_sd\n"
                      "S,2020-01-01T01:00:00Z,B,41,-75,3,1,1,1.4\n");
  int rc = 0;
  const auto err = testing::capture_stderr(bin("evaluate --data " + (dir / "obs.csv").string() + " --predictions " +
                                                (dir / "pred.csv").string() + " --out " + (dir / "ev").string()),
                                            &rc);
  CHECK(rc == 1);
  CHECK(err.find("IngestError") != std::string::npos);
  CHECK(err.find("(B, 2020-01-01T01:00:00Z)") != std::string::npos);
}

namespace {

// Gridded predictions where the sd peak sits `shift` columns right of the wind peak.
std::string peak_grid(std::size_t shift) {
  std::ostringstream out;
  out << "storm_id,timestamp_utc,row,col,lat,lon,WS_10m,total_sd\n";
  for (int h = 0; h < 5; ++h) {
    const int pr = 1 + h % 3, pc = h;
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 9; ++c) {
        const double ws = 20.0 - std::hypot(r - pr, c - pc);
        const double sd = 5.0 - 0.1 * std::hypot(r - pr, c - pc - static_cast<int>(shift));
        out << "T,2021-01-01T0" << h << ":00:00Z," << r << ',' << c << ',' << 40 + 0.25 * r << ',' << -76 + 0.25 * c
            << ',' << format_double(ws) << ',' << format_double(sd) << '\n';
      }
    }
  }
  return out.str();
}

double alignment(const fs::path& dir, const std::string& grid, int k) {
  testing::write_text(dir / "grid_pred.csv", grid);
  const auto out = dir / ("sp" + std::to_string(k));
  REQUIRE(testing::run_command(bin("spatial --predictions " + (dir / "grid_pred.csv").string() + " --align-k " +
                                   std::to_string(k) + " --out " + out.string())) == 0);
  return nlohmann::json::parse(testing::slurp(out / "alignment.json"))["fraction"].get<double>();
}

}  // namespace

TEST_CASE("spatial alignment on copied and shifted fields") {
  const auto dir = testing::fresh_dir("cli_spatial");
  CHECK(alignment(dir, peak_grid(0), 0) == 1.0);
  CHECK(alignment(dir, peak_grid(2), 1) == 0.0);
  CHECK(alignment(dir, peak_grid(2), 2) == 1.0);
  const auto tracks = parse_csv(testing::slurp(dir / "sp2" / "tracks.csv"));
  CHECK(tracks.rows.size() == 10);
}

TEST_CASE("spatial without total_sd is a usage error") {
  const auto dir = testing::fresh_dir("cli_spatial_nosd");
  testing::write_text(dir / "g.csv", "storm_id,timestamp_utc,row,col,lat,lon,WS_10m\nT,2021-01-01T00:00:00Z,0,0,40,-76,5\n");
  int rc = 0;
  const auto err = testing::capture_stderr(
      bin("spatial --predictions " + (dir / "g.csv").string() + " --out " + (dir / "o").string()), &rc);
  CHECK(rc == 1);
  CHECK(err.find("UsageError") != std::string::npos);
  CHECK(err.find("total_sd") != std::string::npos);
}

TEST_CASE("tune writes a resumable log and an annotated Pareto table") {
  const auto dir = testing::fresh_dir("cli_tune");
  testing::write_text(dir / "stations.csv", testing::station_csv(5, 4, 3, 12));
  const std::string cmd = bin("tune --data " + (dir / "stations.csv").string() + " --out " + (dir / "t").string() +
                              " --trials 2 --max-epochs 2 --seed 8");
  REQUIRE(testing::run_command(cmd) == 0);
  const auto pareto = testing::slurp(dir / "t" / "pareto.csv");
  CHECK(pareto.rfind("# objectives: minimize val_mae, maximize val_r2_rmse_sigma_total, maximize val_pitd_skill", 0) ==
        0);
  CHECK(fs::exists(dir / "t" / "recommendation.json"));
  const auto first = testing::slurp(dir / "t" / "trials.csv");
  REQUIRE(testing::run_command(cmd) == 0);
  CHECK(testing::slurp(dir / "t" / "trials.csv") == first);
}

TEST_CASE("configuration precedence: defaults, then file, then flags") {
  const auto dir = testing::fresh_dir("cli_config");
  testing::write_text(dir / "cfg.json", R"({"seed": 9, "max_epochs": 7, "levels": [0.9]})");
  const auto c = cli::resolve("train", dir / "cfg.json", {{"seed", "11"}, {"data", "d.csv"}, {"out", "o"}});
  CHECK(c.seed == 11);
  CHECK(c.train.seed == 11);
  CHECK(c.train.max_epochs == 7);
  CHECK(c.levels == std::vector<double>{0.9});
  CHECK(c.train.patience == evidential::TrainConfig{}.patience);
  CHECK_THROWS_AS(cli::apply_config_json(const_cast<cli::RunConfig&>(c), R"({"no_such_key": 1})"), ConfigError);
}
