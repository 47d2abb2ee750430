#include "gustuq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "gustuq/common.hpp"
#include "gustuq/csv.hpp"

namespace gustuq::data {

namespace {

using namespace std::chrono;

const std::vector<std::string> kDerivedInputs = {
    "WS_10m",       "WS_850mb",         "WS_950mb",      "PBLH",          "Ustar",
    "wind_dir_deg", "terrain_height_m", "lapse_sfc_1km", "lapse_sfc_2km"};

const std::vector<std::string> kDerivedFeatures = {
    "WS_10m",     "WS_850mb",       "WS_950mb",           "PBLH",
    "Ustar",      "WindDC_sin",     "WindDC_cos",         "Terrain_height",
    "Lapse_rate_sfc_1km", "Lapse_rate_sfc_2km", "yday"};

constexpr std::size_t kWindDirInput = 5;
const char* const kTarget = "gust_obs";

}  // namespace

Timestamp parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int n = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n < 6 || (sep != 'T' && sep != ' ')) throw IngestError("unparsable timestamp '" + text + "'");
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == ':') {
    int c2 = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &s, &c2) != 1) throw IngestError("unparsable timestamp '" + text + "'");
    rest = rest.substr(static_cast<std::size_t>(c2));
  }
  if (rest == "Z") rest.clear();
  if (!rest.empty()) throw IngestError("unparsable timestamp '" + text + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60 || h < 0 || mi < 0 || s < 0) {
    throw IngestError("invalid timestamp '" + text + "'");
  }
  return sys_days(ymd) + hours(h) + minutes(mi) + seconds(s);
}

std::string format_timestamp(Timestamp t) {
  const auto day_start = floor<days>(t);
  const year_month_day ymd(day_start);
  const hh_mm_ss hms(t - day_start);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

int day_of_year(Timestamp t) {
  const auto day_start = floor<days>(t);
  const year_month_day ymd(day_start);
  const sys_days jan1{ymd.year() / January / 1};
  return static_cast<int>((day_start - jan1).count()) + 1;
}

double yday_feature(int doy) {
  return std::cos(2.0 * std::numbers::pi * (static_cast<double>(doy) - 1.0) / 365.0);
}

double yday_feature(Timestamp t) { return yday_feature(day_of_year(t)); }

DirectionComponents wind_direction_components(double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::sin(rad), std::cos(rad)};
}

Schema Schema::station() { return {}; }

Schema Schema::grid() {
  Schema s;
  s.layout = Layout::Grid;
  return s;
}

Schema Schema::custom(Layout layout, std::vector<std::string> columns) {
  if (columns.empty()) throw ConfigError("custom schema needs at least one feature column");
  Schema s;
  s.layout = layout;
  s.derived_features = false;
  s.custom_columns = std::move(columns);
  return s;
}

std::vector<std::string> Schema::input_columns() const {
  return derived_features ? kDerivedInputs : custom_columns;
}

std::vector<std::string> Schema::feature_names() const {
  return derived_features ? kDerivedFeatures : custom_columns;
}

std::vector<std::string> Schema::file_columns(bool with_target) const {
  std::vector<std::string> cols{"storm_id", "timestamp_utc"};
  if (layout == Layout::Station) {
    cols.push_back("station_id");
  } else {
    cols.push_back("row");
    cols.push_back("col");
  }
  cols.push_back("lat");
  cols.push_back("lon");
  for (const auto& c : input_columns()) cols.push_back(c);
  if (with_target && layout == Layout::Station) cols.push_back(kTarget);
  return cols;
}

bool RecordSet::has_targets() const {
  return std::all_of(records.begin(), records.end(), [](const StormRecord& r) { return r.gust.has_value(); });
}

std::vector<double> derive_features(const Schema& schema, const std::vector<double>& inputs, Timestamp t) {
  if (!schema.derived_features) return inputs;
  const auto dir = wind_direction_components(inputs[kWindDirInput]);
  return {inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], dir.sin, dir.cos, inputs[6], inputs[7], inputs[8],
          yday_feature(t)};
}

RecordSet load_records(const std::string& text, const Schema& schema, const LoadOptions& options) {
  const CsvTable table = parse_csv(text);
  const bool station = schema.layout == Layout::Station;
  const auto expected = schema.file_columns(true);

  std::vector<std::string> unknown;
  for (const auto& h : table.header) {
    if (std::find(expected.begin(), expected.end(), h) == expected.end()) unknown.push_back(h);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown column(s):";
    for (const auto& u : unknown) msg += " '" + u + "'";
    throw IngestError(msg);
  }
  std::set<std::string> seen;
  for (const auto& h : table.header) {
    if (!seen.insert(h).second) throw IngestError("duplicate column '" + h + "'");
  }
  for (const auto& c : schema.file_columns(false)) table.require(c);
  const auto target_col = station ? table.find(kTarget) : std::nullopt;
  if (station && !target_col && options.mode == LoadMode::Training) {
    throw IngestError("missing target column '" + std::string(kTarget) + "'");
  }

  const auto inputs = schema.input_columns();
  std::vector<std::size_t> input_idx;
  for (const auto& c : inputs) input_idx.push_back(table.require(c));
  const std::size_t i_storm = table.require("storm_id");
  const std::size_t i_time = table.require("timestamp_utc");
  const std::size_t i_lat = table.require("lat");
  const std::size_t i_lon = table.require("lon");

  RecordSet set;
  set.schema = schema;
  std::vector<std::string> problems;
  std::size_t problem_count = 0;
  auto reject = [&](std::size_t k, const std::string& why) {
    ++problem_count;
    if (problems.size() < 10) problems.push_back("line " + std::to_string(table.line_numbers[k]) + ": " + why);
  };

  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    StormRecord rec;
    rec.storm_id = row[i_storm];
    if (rec.storm_id.empty()) {
      reject(k, "empty storm_id");
      continue;
    }
    try {
      rec.time = parse_timestamp(row[i_time]);
    } catch (const IngestError& e) {
      reject(k, e.what());
      continue;
    }
    if (station) {
      rec.station_id = row[table.require("station_id")];
      if (rec.station_id.empty()) {
        reject(k, "empty station_id");
        continue;
      }
    } else {
      double r = 0, c = 0;
      if (!parse_double(row[table.require("row")], r) || !parse_double(row[table.require("col")], c) ||
          r < 0 || c < 0 || r != std::floor(r) || c != std::floor(c)) {
        reject(k, "row/col must be non-negative integers");
        continue;
      }
      rec.row = static_cast<long>(r);
      rec.col = static_cast<long>(c);
    }
    if (!parse_double(row[i_lat], rec.lat) || !parse_double(row[i_lon], rec.lon) || !std::isfinite(rec.lat) ||
        !std::isfinite(rec.lon)) {
      reject(k, "unparsable lat/lon");
      continue;
    }
    bool ok = true;
    rec.inputs.resize(inputs.size());
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      if (!parse_double(row[input_idx[j]], rec.inputs[j]) || !std::isfinite(rec.inputs[j])) {
        reject(k, "unparsable value '" + row[input_idx[j]] + "' in column '" + inputs[j] + "'");
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    if (schema.derived_features) {
      const double dir = rec.inputs[kWindDirInput];
      if (!(dir >= 0.0 && dir < 360.0)) {
        reject(k, "wind_dir_deg must lie in [0, 360)");
        continue;
      }
    }
    if (target_col) {
      const std::string& g = row[*target_col];
      if (g.empty()) {
        if (options.mode == LoadMode::Training) {
          reject(k, "missing gust_obs in training mode");
          continue;
        }
      } else {
        double gust = 0.0;
        if (!parse_double(g, gust) || !std::isfinite(gust)) {
          reject(k, "unparsable gust_obs '" + g + "'");
          continue;
        }
        if (gust < 0.0) {
          reject(k, "gust_obs must be >= 0");
          continue;
        }
        rec.gust = gust;
      }
    }
    rec.features = derive_features(schema, rec.inputs, rec.time);
    set.records.push_back(std::move(rec));
  }

  if (problem_count == 0 && options.max_storm_hours > 0.0) {
    std::map<std::string, std::pair<Timestamp, Timestamp>> span;
    for (const auto& r : set.records) {
      auto [it, inserted] = span.try_emplace(r.storm_id, r.time, r.time);
      if (!inserted) {
        it->second.first = std::min(it->second.first, r.time);
        it->second.second = std::max(it->second.second, r.time);
      }
    }
    for (const auto& [storm, range] : span) {
      const double hours_span = duration<double>(range.second - range.first).count() / 3600.0;
      if (hours_span > options.max_storm_hours) {
        ++problem_count;
        if (problems.size() < 10) {
          problems.push_back("storm " + storm + " spans " + format_double(hours_span) + " h, exceeding the " +
                             format_double(options.max_storm_hours) + " h window");
        }
      }
    }
  }

  if (problem_count > 0) {
    std::string msg = std::to_string(problem_count) + " malformed row(s)";
    if (problem_count > problems.size()) msg += " (first " + std::to_string(problems.size()) + " shown)";
    for (const auto& p : problems) msg += "; " + p;
    throw IngestError(msg);
  }
  return set;
}

RecordSet load_records_file(const std::string& path, const Schema& schema, const LoadOptions& options) {
  return load_records(read_file(path), schema, options);
}

std::string write_records(const RecordSet& set) {
  const bool with_target = set.schema.layout == Layout::Station &&
                           std::any_of(set.records.begin(), set.records.end(),
                                       [](const StormRecord& r) { return r.gust.has_value(); });
  const auto cols = set.schema.file_columns(with_target);
  std::ostringstream out;
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : set.records) {
    out << r.storm_id << ',' << format_timestamp(r.time) << ',';
    if (set.schema.layout == Layout::Station) {
      out << r.station_id << ',';
    } else {
      out << r.row << ',' << r.col << ',';
    }
    out << format_double(r.lat) << ',' << format_double(r.lon);
    for (double v : r.inputs) out << ',' << format_double(v);
    if (with_target) out << ',' << (r.gust ? format_double(*r.gust) : std::string());
    out << '\n';
  }
  return out.str();
}

Matrix feature_matrix(const RecordSet& set) {
  const std::size_t width = set.schema.feature_names().size();
  Matrix m(set.records.size(), width);
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& f = set.records[i].features;
    if (f.size() != width) throw DimensionError("record " + std::to_string(i) + " has the wrong feature count");
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

std::vector<double> targets(const RecordSet& set) {
  std::vector<double> y;
  y.reserve(set.records.size());
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (!set.records[i].gust) throw UsageError("record " + std::to_string(i) + " has no observed gust");
    y.push_back(*set.records[i].gust);
  }
  return y;
}

std::vector<std::string> storms_by_start(const RecordSet& set) {
  std::map<std::string, Timestamp> start;
  for (const auto& r : set.records) {
    auto [it, inserted] = start.try_emplace(r.storm_id, r.time);
    if (!inserted) it->second = std::min(it->second, r.time);
  }
  std::vector<std::pair<Timestamp, std::string>> order;
  for (const auto& [id, t] : start) order.emplace_back(t, id);
  std::sort(order.begin(), order.end());
  std::vector<std::string> ids;
  for (auto& [t, id] : order) ids.push_back(std::move(id));
  return ids;
}

namespace {

RecordSet subset(const RecordSet& set, const std::set<std::string>& storms) {
  RecordSet out;
  out.schema = set.schema;
  for (const auto& r : set.records) {
    if (storms.count(r.storm_id)) out.records.push_back(r);
  }
  return out;
}

}  // namespace

Split chronological_split(const RecordSet& set, std::size_t train, std::size_t validation, std::size_t test) {
  Split split;
  split.spec.ordered_storms = storms_by_start(set);
  const std::size_t total = split.spec.ordered_storms.size();
  if (train + validation + test != total) {
    throw UsageError("split counts " + std::to_string(train) + "/" + std::to_string(validation) + "/" +
                     std::to_string(test) + " do not sum to the " + std::to_string(total) + " storms present");
  }
  split.spec.train = train;
  split.spec.validation = validation;
  split.spec.test = test;
  const auto& ids = split.spec.ordered_storms;
  const std::set<std::string> tr(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  const std::set<std::string> va(ids.begin() + static_cast<std::ptrdiff_t>(train),
                                 ids.begin() + static_cast<std::ptrdiff_t>(train + validation));
  const std::set<std::string> te(ids.begin() + static_cast<std::ptrdiff_t>(train + validation), ids.end());
  split.train = subset(set, tr);
  split.validation = subset(set, va);
  split.test = subset(set, te);

  for (const auto& id : tr) {
    if (va.count(id) || te.count(id)) throw UsageError("storm " + id + " straddles two splits");
  }
  for (const auto& id : va) {
    if (te.count(id)) throw UsageError("storm " + id + " straddles two splits");
  }
  return split;
}

std::vector<std::pair<RecordSet, RecordSet>> cross_validation_folds(const RecordSet& set, std::size_t folds) {
  const auto ids = storms_by_start(set);
  if (folds < 2 || folds > ids.size()) {
    throw UsageError("fold count must lie in [2, number of storms]");
  }
  std::vector<std::pair<RecordSet, RecordSet>> out;
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t begin = k * ids.size() / folds;
    const std::size_t end = (k + 1) * ids.size() / folds;
    std::set<std::string> val, tr;
    for (std::size_t i = 0; i < ids.size(); ++i) (i >= begin && i < end ? val : tr).insert(ids[i]);
    out.emplace_back(subset(set, tr), subset(set, val));
  }
  return out;
}

Standardizer::Standardizer(std::vector<double> means, std::vector<double> scales)
    : means_(std::move(means)), scales_(std::move(scales)), fitted_(true) {
  if (means_.size() != scales_.size()) throw DimensionError("standardizer means/scales differ in length");
  for (double s : scales_) {
    if (!(s > 0.0)) throw UsageError("standardizer scales must be positive");
  }
}

Standardizer Standardizer::fit(const Matrix& train) {
  if (train.rows() == 0) throw UsageError("cannot fit a standardizer on an empty training set");
  const std::size_t cols = train.cols();
  const double n = static_cast<double>(train.rows());
  std::vector<double> means(cols, 0.0), scales(cols, 1.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) sum += train(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) ss += (train(r, c) - mean) * (train(r, c) - mean);
    const double sd = std::sqrt(ss / n);
    if (sd > 0.0) {
      means[c] = mean;
      scales[c] = sd;
    } else {
      warn("standardize: column " + std::to_string(c) + " is constant in the training split; passed through");
    }
  }
  return Standardizer(std::move(means), std::move(scales));
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (!fitted_) throw UsageError("standardizer applied before fitting");
  if (x.cols() != means_.size()) {
    throw DimensionError("standardizer fitted on " + std::to_string(means_.size()) + " columns, got " +
                         std::to_string(x.cols()));
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - means_[c]) / scales_[c];
  }
  return out;
}

double Standardizer::apply(std::size_t column, double value) const {
  if (!fitted_) throw UsageError("standardizer applied before fitting");
  return (value - means_.at(column)) / scales_.at(column);
}

std::vector<std::pair<Timestamp, double>> hourly_gust_from_5min(
    const std::vector<std::pair<Timestamp, double>>& readings) {
  std::map<Timestamp, double> by_time;
  for (const auto& [t, v] : readings) {
    auto [it, inserted] = by_time.try_emplace(t, v);
    if (!inserted) it->second = std::max(it->second, v);
  }
  std::set<Timestamp> hours_seen;
  for (const auto& [t, v] : by_time) {
    const auto top = ceil<hours>(t);
    if (top - t <= minutes(10) && (t == top || top - t == minutes(5) || top - t == minutes(10))) {
      hours_seen.insert(top);
    }
  }
  std::vector<std::pair<Timestamp, double>> out;
  for (const auto& h : hours_seen) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto offset : {minutes(10), minutes(5), minutes(0)}) {
      auto it = by_time.find(h - offset);
      if (it != by_time.end()) best = std::max(best, it->second);
    }
    out.emplace_back(h, best);
  }
  return out;
}

RecordSet filter_bbox(const RecordSet& set, double lat_min, double lat_max, double lon_min, double lon_max,
                      double margin) {
  RecordSet out;
  out.schema = set.schema;
  for (const auto& r : set.records) {
    if (r.lat >= lat_min + margin && r.lat <= lat_max - margin && r.lon >= lon_min + margin &&
        r.lon <= lon_max - margin) {
      out.records.push_back(r);
    }
  }
  return out;
}

}  // namespace gustuq::data
