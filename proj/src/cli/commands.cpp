#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gustuq/cli.hpp"
#include "gustuq/common.hpp"
#include "gustuq/csv.hpp"
#include "gustuq/data.hpp"
#include "gustuq/error.hpp"
#include "gustuq/metrics.hpp"
#include "gustuq/model_io.hpp"
#include "gustuq/spatial.hpp"
#include "gustuq/tune.hpp"
#include "gustuq/xai.hpp"

namespace gustuq::cli {

namespace {

using Json = nlohmann::ordered_json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

data::Schema input_schema(const RunConfig& c, data::Layout layout) {
  if (c.features.empty()) return layout == data::Layout::Grid ? data::Schema::grid() : data::Schema::station();
  return data::Schema::custom(layout, c.features);
}

std::string level_label(double level) { return format_double(level); }

metrics::EvalOptions eval_options(const RunConfig& c) {
  metrics::EvalOptions o;
  o.levels = c.levels;
  o.mask_percentile = c.mask_percentile;
  o.exclude_flagged = c.exclude_flagged;
  return o;
}

data::Split split_storms(const RunConfig& c, const data::RecordSet& set) {
  const std::size_t storms = data::storms_by_start(set).size();
  const auto def_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(storms)));
  const auto def_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(storms)));
  const std::size_t train = c.train_storms.value_or(def_train);
  const std::size_t val = c.val_storms.value_or(def_val);
  if (!c.test_storms && train + val > storms) {
    throw ConfigError("split asks for " + std::to_string(train + val) + " storms but the data hold " +
                      std::to_string(storms));
  }
  const std::size_t test = c.test_storms.value_or(storms - train - val);
  return data::chronological_split(set, train, val, test);
}

evidential::TrainingData standardized(const data::RecordSet& set, const data::Standardizer& s) {
  return {s.apply(data::feature_matrix(set)), data::targets(set)};
}

std::vector<double> total_sds(const std::vector<evidential::UncertaintyDecomposition>& preds) {
  std::vector<double> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.total_sd);
  return out;
}

// Per-row prediction table keyed like the input records.
std::string prediction_table(const data::RecordSet& set,
                             const std::vector<evidential::UncertaintyDecomposition>& preds,
                             const std::vector<double>& levels, const metrics::MaskResult& mask) {
  const bool grid = set.schema.layout == data::Layout::Grid;
  const auto inputs = set.schema.input_columns();
  const auto ws = std::find(inputs.begin(), inputs.end(), "WS_10m");
  const bool with_ws = grid && ws != inputs.end();
  const auto ws_index = static_cast<std::size_t>(ws - inputs.begin());

  std::ostringstream out;
  out << (grid ? "storm_id,timestamp_utc,row,col,lat,lon" : "storm_id,timestamp_utc,station_id,lat,lon");
  if (with_ws) out << ",WS_10m";
  out << ",mean,aleatoric_sd,epistemic_sd,total_sd";
  for (double l : levels) out << ",lower_" << level_label(l) << ",upper_" << level_label(l);
  out << ",highly_uncertain\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& r = set.records[i];
    const auto& d = preds[i];
    out << r.storm_id << ',' << data::format_timestamp(r.time) << ',';
    if (grid) {
      out << r.row << ',' << r.col;
    } else {
      out << r.station_id;
    }
    out << ',' << format_double(r.lat) << ',' << format_double(r.lon);
    if (with_ws) out << ',' << format_double(r.inputs[ws_index]);
    out << ',' << format_double(d.mean) << ',' << format_double(d.aleatoric_sd) << ','
        << format_double(d.epistemic_sd) << ',' << format_double(d.total_sd);
    for (double l : levels) {
      const auto pi = metrics::prediction_interval(d.mean, d.total_sd, l);
      out << ',' << format_double(pi.lower) << ',' << format_double(pi.upper);
    }
    out << ',' << (mask.flags[i] ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string epoch_log_csv(const std::vector<evidential::EpochRecord>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,val_mae,val_mean_total_sd,calibration_warning\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.val_mae) << ',' << format_double(e.val_mean_total_sd) << ','
        << (e.calibration_warning ? 1 : 0) << '\n';
  }
  return out.str();
}

Json split_json(const data::Split& split) {
  const auto& ids = split.spec.ordered_storms;
  auto slice = [&](std::size_t begin, std::size_t n) {
    return std::vector<std::string>(ids.begin() + static_cast<std::ptrdiff_t>(begin),
                                    ids.begin() + static_cast<std::ptrdiff_t>(begin + n));
  };
  return Json{{"train", slice(0, split.spec.train)},
              {"validation", slice(split.spec.train, split.spec.validation)},
              {"test", slice(split.spec.train + split.spec.validation, split.spec.test)}};
}

// Header check against the columns the model needs, with an explicit diff.
void check_header(const std::string& text, const data::Schema& schema) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) break;
  }
  const auto header = split_csv_line(line);
  const auto expected = schema.file_columns(false);
  std::vector<std::string> missing, unexpected;
  for (const auto& c : expected) {
    if (std::find(header.begin(), header.end(), c) == header.end()) missing.push_back(c);
  }
  for (const auto& h : header) {
    const bool target = h == "gust_obs" && schema.layout == data::Layout::Station;
    if (!target && std::find(expected.begin(), expected.end(), h) == expected.end()) unexpected.push_back(h);
  }
  if (missing.empty() && unexpected.empty()) return;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  };
  throw SchemaError("input columns do not match the model features; missing: [" + join(missing) +
                    "]; unexpected: [" + join(unexpected) + "]");
}

// Regular grid axes shared by every time step of a gridded table.
struct GridAxes {
  std::vector<long> rows, cols;
  std::vector<double> lats, lons;

  std::size_t row_index(long r) const {
    return static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), r) - rows.begin());
  }
  std::size_t col_index(long c) const {
    return static_cast<std::size_t>(std::lower_bound(cols.begin(), cols.end(), c) - cols.begin());
  }
  spatial::GridField empty_field() const {
    return {lats, lons, Matrix(rows.size(), cols.size()), std::vector<std::uint8_t>(rows.size() * cols.size(), 0)};
  }
};

struct GridCell {
  long row, col;
  double lat, lon;
};

GridAxes build_axes(const std::vector<GridCell>& cells) {
  std::map<long, double> lat_of, lon_of;
  for (const auto& c : cells) {
    lat_of.try_emplace(c.row, c.lat);
    lon_of.try_emplace(c.col, c.lon);
  }
  GridAxes a;
  for (const auto& [r, lat] : lat_of) {
    a.rows.push_back(r);
    a.lats.push_back(lat);
  }
  for (const auto& [c, lon] : lon_of) {
    a.cols.push_back(c);
    a.lons.push_back(lon);
  }
  return a;
}

// Groups row indices by storm, then by time, in chronological order.
template <typename Key>
std::map<std::string, std::map<Key, std::vector<std::size_t>>> group_rows(
    const std::vector<std::string>& storms, const std::vector<Key>& times) {
  std::map<std::string, std::map<Key, std::vector<std::size_t>>> out;
  for (std::size_t i = 0; i < storms.size(); ++i) out[storms[i]][times[i]].push_back(i);
  return out;
}

void write_grid_outputs(const RunConfig& c, const data::RecordSet& set,
                        const std::vector<evidential::UncertaintyDecomposition>& preds) {
  std::vector<GridCell> cells;
  std::vector<std::string> storms;
  std::vector<data::Timestamp> times;
  for (const auto& r : set.records) {
    cells.push_back({r.row, r.col, r.lat, r.lon});
    storms.push_back(r.storm_id);
    times.push_back(r.time);
  }
  const GridAxes axes = build_axes(cells);

  std::ostringstream grad;
  grad << "storm_id,timestamp_utc,row,col,lat,lon,gradient\n";
  std::ostringstream means;
  means << "storm_id,row,col,lat,lon,mean_gust,mean_total_sd,norm_gust,norm_total_sd\n";

  for (const auto& [storm, by_time] : group_rows(storms, times)) {
    const std::size_t nr = axes.rows.size(), nc = axes.cols.size();
    std::vector<double> gust_sum(nr * nc, 0.0), sd_sum(nr * nc, 0.0);
    std::vector<std::size_t> count(nr * nc, 0);
    for (const auto& [t, rows] : by_time) {
      spatial::GridField field = axes.empty_field();
      for (std::size_t i : rows) {
        const std::size_t r = axes.row_index(cells[i].row), col = axes.col_index(cells[i].col);
        field.values(r, col) = preds[i].mean;
        field.mask[r * nc + col] = 1;
        gust_sum[r * nc + col] += preds[i].mean;
        sd_sum[r * nc + col] += preds[i].total_sd;
        ++count[r * nc + col];
      }
      if (nr < 2 || nc < 2) {
        warn("grid is smaller than 2x2; no gradient written");
        continue;
      }
      const auto g = spatial::spatial_gradient(field);
      for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t col = 0; col < nc; ++col) {
          if (!g.valid(r, col)) continue;
          grad << storm << ',' << data::format_timestamp(t) << ',' << axes.rows[r] << ',' << axes.cols[col] << ','
               << format_double(axes.lats[r]) << ',' << format_double(axes.lons[col]) << ','
               << format_double(g.values(r, col)) << '\n';
        }
      }
    }

    spatial::GridField gust_field = axes.empty_field();
    spatial::GridField sd_field = axes.empty_field();
    for (std::size_t k = 0; k < nr * nc; ++k) {
      if (count[k] == 0) continue;
      gust_field.values.data()[k] = gust_sum[k] / static_cast<double>(count[k]);
      sd_field.values.data()[k] = sd_sum[k] / static_cast<double>(count[k]);
      gust_field.mask[k] = sd_field.mask[k] = 1;
    }
    auto normalized = [&](const spatial::GridField& f, const char* what) {
      try {
        return spatial::minmax_normalize(f);
      } catch (const UsageError&) {
        warn("storm " + storm + ": " + what + " field is constant; normalized values are nan");
        spatial::GridField n = f;
        std::fill(n.values.data().begin(), n.values.data().end(), kNaN);
        return n;
      }
    };
    const auto ng = normalized(gust_field, "mean gust");
    const auto ns = normalized(sd_field, "mean total sd");
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t col = 0; col < nc; ++col) {
        if (!gust_field.valid(r, col)) continue;
        means << storm << ',' << axes.rows[r] << ',' << axes.cols[col] << ',' << format_double(axes.lats[r]) << ','
              << format_double(axes.lons[col]) << ',' << format_double(gust_field.values(r, col)) << ','
              << format_double(sd_field.values(r, col)) << ',' << format_double(ng.values(r, col)) << ','
              << format_double(ns.values(r, col)) << '\n';
      }
    }
  }
  write_file_atomic(c.out / "gradient.csv", grad.str());
  write_file_atomic(c.out / "storm_mean_fields.csv", means.str());
}

double cell_number(const CsvTable& t, std::size_t row, std::size_t col) {
  double v = 0.0;
  if (!parse_double(t.rows[row][col], v)) {
    throw IngestError("line " + std::to_string(t.line_numbers[row]) + ": unparsable number '" +
                      t.rows[row][col] + "' in column " + t.header[col]);
  }
  return v;
}

}  // namespace

void cmd_train(const RunConfig& c) {
  c.train.validate();
  const auto schema = input_schema(c, data::Layout::Station);
  const auto set = data::load_records_file(c.data.string(), schema);
  const auto split = split_storms(c, set);
  if (split.train.empty() || split.validation.empty()) {
    throw ConfigError("training needs at least one training and one validation storm");
  }

  const auto standardizer = data::Standardizer::fit(data::feature_matrix(split.train));
  const auto train = standardized(split.train, standardizer);
  const auto val = standardized(split.validation, standardizer);
  const auto result = evidential::train_evidential(train, val, c.train);

  io::ModelArtifact artifact{result.model, standardizer, schema, c.train};
  io::save_model(c.out / "model.json", artifact);
  write_file_atomic(c.out / "epoch_log.csv", epoch_log_csv(result.log));
  write_file_atomic(c.out / "split.json", split_json(split).dump(1) + "\n");

  const auto preds = evidential::predict(result.model, val.features, c.threads);
  const auto mask = metrics::mask_highly_uncertain(total_sds(preds), c.mask_percentile);
  write_file_atomic(c.out / "validation_predictions.csv", prediction_table(split.validation, preds, c.levels, mask));
  const auto report = metrics::evaluate(preds, val.targets, eval_options(c));
  write_file_atomic(c.out / "validation_report.json", metrics::report_to_json(report));
}

void cmd_predict(const RunConfig& c) {
  const auto artifact = io::load_model(c.model);
  const data::Layout layout = c.layout == "grid" ? data::Layout::Grid : data::Layout::Station;
  data::Schema schema = artifact.schema;
  schema.layout = layout;
  if (!c.features.empty()) io::check_schema(schema, input_schema(c, layout));

  const std::string text = read_file(c.data);
  check_header(text, schema);
  const auto set = data::load_records(text, schema, {data::LoadMode::Inference});
  if (set.empty()) throw IngestError("input table " + c.data.string() + " has no rows");

  const auto preds =
      evidential::predict(artifact.model, artifact.standardizer.apply(data::feature_matrix(set)), c.threads);
  const auto mask = metrics::mask_highly_uncertain(total_sds(preds), c.mask_percentile);
  write_file_atomic(c.out / "predictions.csv", prediction_table(set, preds, c.levels, mask));
  if (layout == data::Layout::Grid) write_grid_outputs(c, set, preds);
}

void cmd_evaluate(const RunConfig& c) {
  const CsvTable pred = parse_csv(read_file(c.predictions));
  const CsvTable obs = parse_csv(read_file(c.data));
  if (!pred.find("station_id")) throw UsageError("predictions table has no station_id column; evaluate needs station predictions");
  const std::size_t p_st = pred.require("station_id"), p_ts = pred.require("timestamp_utc"),
                    p_mean = pred.require("mean"), p_al = pred.require("aleatoric_sd"),
                    p_ep = pred.require("epistemic_sd"), p_tot = pred.require("total_sd");
  const std::size_t o_st = obs.require("station_id"), o_ts = obs.require("timestamp_utc"),
                    o_g = obs.require("gust_obs");

  auto key = [](const std::string& station, const std::string& ts) {
    return std::make_pair(station, data::format_timestamp(data::parse_timestamp(ts)));
  };
  std::map<std::pair<std::string, std::string>, double> observed;
  for (std::size_t i = 0; i < obs.rows.size(); ++i) {
    if (obs.rows[i][o_g].empty()) continue;
    if (!observed.emplace(key(obs.rows[i][o_st], obs.rows[i][o_ts]), cell_number(obs, i, o_g)).second) {
      throw IngestError("line " + std::to_string(obs.line_numbers[i]) + ": duplicate observation for station " +
                        obs.rows[i][o_st] + " at " + obs.rows[i][o_ts]);
    }
  }

  std::vector<evidential::UncertaintyDecomposition> decs;
  std::vector<double> y;
  std::vector<std::string> stations;
  std::vector<std::string> unmatched;
  std::size_t n_unmatched = 0;
  for (std::size_t i = 0; i < pred.rows.size(); ++i) {
    const auto k = key(pred.rows[i][p_st], pred.rows[i][p_ts]);
    const auto it = observed.find(k);
    if (it == observed.end()) {
      if (unmatched.size() < 10) unmatched.push_back("(" + k.first + ", " + k.second + ")");
      ++n_unmatched;
      continue;
    }
    evidential::UncertaintyDecomposition d;
    d.mean = cell_number(pred, i, p_mean);
    d.aleatoric_sd = cell_number(pred, i, p_al);
    d.epistemic_sd = cell_number(pred, i, p_ep);
    d.total_sd = cell_number(pred, i, p_tot);
    d.aleatoric_var = d.aleatoric_sd * d.aleatoric_sd;
    d.epistemic_var = d.epistemic_sd * d.epistemic_sd;
    d.total_var = d.total_sd * d.total_sd;
    decs.push_back(d);
    y.push_back(it->second);
    stations.push_back(k.first);
  }
  if (decs.empty()) {
    std::string list;
    for (const auto& u : unmatched) list += (list.empty() ? "" : " ") + u;
    throw IngestError("no prediction matched an observation on (station_id, timestamp_utc); first unmatched: " +
                      (list.empty() ? std::string("none (predictions table is empty)") : list));
  }
  if (n_unmatched > 0) warn(std::to_string(n_unmatched) + " prediction rows have no matching observation");

  const auto report = metrics::evaluate(decs, y, eval_options(c));
  write_file_atomic(c.out / "report.json", metrics::report_to_json(report));
  write_file_atomic(c.out / "discard_fraction.csv", metrics::discard_csv(report));
  write_file_atomic(c.out / "spread_skill.csv", metrics::spread_skill_csv(report));
  write_file_atomic(c.out / "pit_histogram.csv", metrics::pit_histogram_csv(report));

  const auto mask = metrics::mask_highly_uncertain(total_sds(decs), c.mask_percentile);
  std::map<std::string, std::vector<std::size_t>> by_station;
  for (std::size_t i = 0; i < stations.size(); ++i) by_station[stations[i]].push_back(i);
  std::ostringstream table;
  table << "station_id,level,z,n,n_used,picp\n";
  for (const auto& [station, rows] : by_station) {
    for (double level : c.levels) {
      std::vector<metrics::PredictionWithUQ> p;
      std::vector<double> o;
      std::size_t used = 0;
      for (std::size_t i : rows) {
        p.push_back(metrics::make_prediction(decs[i], level, mask.flags[i]));
        o.push_back(y[i]);
        if (!(c.exclude_flagged && mask.flags[i])) ++used;
      }
      const auto v = metrics::picp(p, o, c.exclude_flagged);
      table << station << ',' << level_label(level) << ',' << format_double(metrics::z_score(level)) << ','
            << rows.size() << ',' << used << ',' << format_double(v.value_or(kNaN)) << '\n';
    }
  }
  write_file_atomic(c.out / "picp_by_station.csv", table.str());
}

void cmd_explain(const RunConfig& c) {
  const auto artifact = io::load_model(c.model);
  const std::string text = read_file(c.data);
  check_header(text, artifact.schema);
  const auto set = data::load_records(text, artifact.schema);
  if (set.empty()) throw IngestError("input table " + c.data.string() + " has no rows");
  const Matrix raw = data::feature_matrix(set);
  const auto y = data::targets(set);
  const auto names = artifact.feature_names();

  // Sweeps and shuffles act on raw feature values; standardization is part of the predictor.
  const xai::Predictor predictor = [&](const Matrix& x) {
    return evidential::predict(artifact.model, artifact.standardizer.apply(x), c.threads);
  };
  xai::PFIOptions options;
  options.n_shuffles = c.shuffles;
  options.seed = c.seed;
  const auto pfi = xai::permutation_importance(predictor, raw, y, names, options);
  write_file_atomic(c.out / "pfi_summary.csv", xai::pfi_summary_csv(pfi));
  write_file_atomic(c.out / "pfi_shuffles.csv", xai::pfi_shuffles_csv(pfi));

  std::vector<xai::PDPCurve> curves;
  const auto& wanted = c.pdp_features.empty() ? names : c.pdp_features;
  for (const auto& name : wanted) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("unknown PDP feature '" + name + "'");
    curves.push_back(
        xai::partial_dependence(predictor, raw, static_cast<std::size_t>(it - names.begin()), c.pdp_grid, name));
  }
  write_file_atomic(c.out / "pdp.csv", xai::pdp_csv(curves));
}

void cmd_spatial(const RunConfig& c) {
  const CsvTable t = parse_csv(read_file(c.predictions));
  for (const char* col : {"total_sd", "WS_10m", "row", "col"}) {
    if (!t.find(col)) {
      throw UsageError("gridded predictions table " + c.predictions.string() + " has no '" + col + "' column");
    }
  }
  const std::size_t i_storm = t.require("storm_id"), i_ts = t.require("timestamp_utc"), i_row = t.require("row"),
                    i_col = t.require("col"), i_lat = t.require("lat"), i_lon = t.require("lon"),
                    i_ws = t.require("WS_10m"), i_sd = t.require("total_sd");

  std::vector<GridCell> cells;
  std::vector<std::string> storms;
  std::vector<data::Timestamp> times;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    cells.push_back({std::lround(cell_number(t, i, i_row)), std::lround(cell_number(t, i, i_col)),
                     cell_number(t, i, i_lat), cell_number(t, i, i_lon)});
    storms.push_back(t.rows[i][i_storm]);
    times.push_back(data::parse_timestamp(t.rows[i][i_ts]));
  }
  if (cells.empty()) throw IngestError("gridded predictions table is empty");
  const GridAxes axes = build_axes(cells);
  const std::size_t nc = axes.cols.size();

  std::ostringstream tracks, series;
  tracks << "storm_id,hour,timestamp_utc,field,value,row,col,lat,lon\n";
  series << "storm_id,hour,timestamp_utc,ws10m_max,total_sd_max,ws10m_norm,total_sd_norm\n";
  std::vector<spatial::MaxLocation> all_ws, all_sd;
  Json per_storm = Json::array();
  std::size_t hour_offset = 0;

  for (const auto& [storm, by_time] : group_rows(storms, times)) {
    std::vector<spatial::GridField> ws_fields, sd_fields;
    std::vector<data::Timestamp> stamps;
    for (const auto& [ts, rows] : by_time) {
      auto ws = axes.empty_field();
      auto sd = axes.empty_field();
      for (std::size_t i : rows) {
        const std::size_t r = axes.row_index(cells[i].row), col = axes.col_index(cells[i].col);
        ws.values(r, col) = cell_number(t, i, i_ws);
        sd.values(r, col) = cell_number(t, i, i_sd);
        ws.mask[r * nc + col] = sd.mask[r * nc + col] = 1;
      }
      ws_fields.push_back(std::move(ws));
      sd_fields.push_back(std::move(sd));
      stamps.push_back(ts);
    }
    auto ws_track = spatial::track_spatial_max(ws_fields);
    auto sd_track = spatial::track_spatial_max(sd_fields);

    auto emit = [&](const std::vector<spatial::MaxLocation>& track, const char* field) {
      for (const auto& m : track) {
        tracks << storm << ',' << m.hour << ',' << data::format_timestamp(stamps[m.hour]) << ',' << field << ','
               << format_double(m.value) << ',' << axes.rows[m.row] << ',' << axes.cols[m.col] << ','
               << format_double(m.lat) << ',' << format_double(m.lon) << '\n';
      }
    };
    emit(ws_track, "WS_10m");
    emit(sd_track, "total_sd");

    std::vector<double> ws_max(stamps.size(), kNaN), sd_max(stamps.size(), kNaN);
    for (const auto& m : ws_track) ws_max[m.hour] = m.value;
    for (const auto& m : sd_track) sd_max[m.hour] = m.value;
    auto normalize = [&](const std::vector<spatial::MaxLocation>& track, const char* what) {
      std::vector<double> out(stamps.size(), kNaN);
      std::vector<double> v;
      for (const auto& m : track) v.push_back(m.value);
      try {
        const auto n = spatial::minmax_normalize(v);
        for (std::size_t k = 0; k < track.size(); ++k) out[track[k].hour] = n[k];
      } catch (const UsageError&) {
        warn("storm " + storm + ": " + what + " maximum series is constant; normalized values are nan");
      }
      return out;
    };
    const auto ws_norm = normalize(ws_track, "WS_10m");
    const auto sd_norm = normalize(sd_track, "total_sd");
    for (std::size_t h = 0; h < stamps.size(); ++h) {
      series << storm << ',' << h << ',' << data::format_timestamp(stamps[h]) << ',' << format_double(ws_max[h])
             << ',' << format_double(sd_max[h]) << ',' << format_double(ws_norm[h]) << ','
             << format_double(sd_norm[h]) << '\n';
    }

    const double f = spatial::alignment_fraction(sd_track, ws_track, c.align_k);
    per_storm.push_back(Json{{"storm_id", storm}, {"hours", stamps.size()}, {"fraction", f}});
    for (auto m : ws_track) {
      m.hour += hour_offset;
      all_ws.push_back(m);
    }
    for (auto m : sd_track) {
      m.hour += hour_offset;
      all_sd.push_back(m);
    }
    hour_offset += stamps.size();
  }

  const double fraction = spatial::alignment_fraction(all_sd, all_ws, c.align_k);
  Json summary{{"k", c.align_k}, {"hours", hour_offset}, {"fraction", fraction}, {"storms", per_storm}};
  write_file_atomic(c.out / "tracks.csv", tracks.str());
  write_file_atomic(c.out / "normalized_series.csv", series.str());
  write_file_atomic(c.out / "alignment.json", summary.dump(1) + "\n");
}

void cmd_tune(const RunConfig& c) {
  const auto schema = input_schema(c, data::Layout::Station);
  const auto set = data::load_records_file(c.data.string(), schema);
  const auto split = split_storms(c, set);
  if (split.train.empty() || split.validation.empty()) {
    throw ConfigError("tuning needs at least one training and one validation storm");
  }
  const auto standardizer = data::Standardizer::fit(data::feature_matrix(split.train));
  const auto train = standardized(split.train, standardizer);
  const auto val = standardized(split.validation, standardizer);

  tune::SearchOptions options;
  options.n_trials = c.trials;
  options.seed = c.seed;
  options.max_epochs = c.train.max_epochs;
  options.patience = c.train.patience;
  options.weight = c.tune_weight;
  options.threads = c.threads;
  options.log_path = c.out / "trials.csv";
  const auto result = tune::search(tune::HyperSpace{}, train, val, options);
  write_file_atomic(c.out / "pareto.csv", tune::pareto_csv(result));

  const auto& best = *std::find_if(result.trials.begin(), result.trials.end(),
                                   [&](const tune::TrialResult& t) { return t.id == result.recommended; });
  Json rec{{"trial_id", best.id},
           {"scalarization_weight", c.tune_weight},
           {"val_mae", best.val_mae},
           {"val_r2_rmse_sigma_total", best.val_r2_rmse_sigma_total},
           {"val_pitd_skill", best.val_pitd_skill},
           {"learning_rate", best.config.learning_rate},
           {"dropout", best.config.dropout},
           {"hidden_layers", best.config.hidden_layers},
           {"hidden_units", best.config.hidden_units},
           {"batch_size", best.config.batch_size},
           {"lambda", best.config.lambda},
           {"l1", best.config.l1},
           {"l2", best.config.l2}};
  write_file_atomic(c.out / "recommendation.json", rec.dump(1) + "\n");
}

}  // namespace gustuq::cli
