#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gustuq/matrix.hpp"

namespace gustuq::data {

using Timestamp = std::chrono::sys_seconds;

/// Accepts YYYY-MM-DDTHH:MM[:SS][Z] (a space may replace the T).
Timestamp parse_timestamp(const std::string& text);
/// Canonical YYYY-MM-DDTHH:MM:SSZ.
std::string format_timestamp(Timestamp t);
int day_of_year(Timestamp t);

/// cos(2 pi (t - 1) / 365) with t the day of year; day 366 uses the same
/// 365 denominator.
double yday_feature(int day_of_year);
double yday_feature(Timestamp t);

struct DirectionComponents {
  double sin;
  double cos;
};
/// Meteorological direction the wind blows from, degrees clockwise from north.
DirectionComponents wind_direction_components(double degrees);

enum class Layout { Station, Grid };

/// Column layout of an input table. The default feature set derives the
/// eleven model features from nine numeric inputs plus the timestamp
/// (wind direction -> sin/cos, timestamp -> yday). A custom feature set
/// uses the listed numeric columns verbatim.
struct Schema {
  Layout layout = Layout::Station;
  bool derived_features = true;
  std::vector<std::string> custom_columns;

  static Schema station();
  static Schema grid();
  static Schema custom(Layout layout, std::vector<std::string> columns);

  /// Numeric input columns read from the file (excluding keys and target).
  std::vector<std::string> input_columns() const;
  /// Model feature names, in model column order.
  std::vector<std::string> feature_names() const;
  /// Every column in file order; the target column is included for station layouts.
  std::vector<std::string> file_columns(bool with_target) const;
};

struct StormRecord {
  std::string storm_id;
  Timestamp time{};
  std::string station_id;      // station layout only
  long row = -1;               // grid layout only
  long col = -1;
  double lat = 0.0;
  double lon = 0.0;
  std::vector<double> inputs;    // Schema::input_columns() order
  std::vector<double> features;  // Schema::feature_names() order
  std::optional<double> gust;    // m/s
};

struct RecordSet {
  Schema schema;
  std::vector<StormRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  bool has_targets() const;
};

enum class LoadMode { Training, Inference };

struct LoadOptions {
  LoadMode mode = LoadMode::Training;
  /// Largest allowed span of timestamps within one storm; 0 disables the check.
  double max_storm_hours = 48.0;
};

/// Derives the model features of one record from its raw inputs.
std::vector<double> derive_features(const Schema& schema, const std::vector<double>& inputs, Timestamp t);

/// Parses a delimited table. Rejects unknown or missing columns and any
/// malformed row; the IngestError lists the first 10 offenders by line.
RecordSet load_records(const std::string& text, const Schema& schema, const LoadOptions& options = {});
RecordSet load_records_file(const std::string& path, const Schema& schema, const LoadOptions& options = {});
std::string write_records(const RecordSet& set);

Matrix feature_matrix(const RecordSet& set);
/// Throws UsageError if any record lacks a target.
std::vector<double> targets(const RecordSet& set);

struct SplitSpec {
  std::vector<std::string> ordered_storms;  // by start time, then id
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct Split {
  SplitSpec spec;
  RecordSet train;
  RecordSet validation;
  RecordSet test;
};

/// Storms ordered by their first timestamp; the earliest `train` storms go
/// to training, the next `validation`, the latest `test`.
std::vector<std::string> storms_by_start(const RecordSet& set);
Split chronological_split(const RecordSet& set, std::size_t train, std::size_t validation,
                          std::size_t test);

/// Rotation of contiguous chronological storm blocks: fold k validates on
/// block k and trains on the rest.
std::vector<std::pair<RecordSet, RecordSet>> cross_validation_folds(const RecordSet& set,
                                                                    std::size_t folds);

/// Z-score transform with statistics from the training split only.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> means, std::vector<double> scales);

  /// Columns with zero sd are passed through unchanged (mean 0, scale 1).
  static Standardizer fit(const Matrix& train);

  bool fitted() const noexcept { return fitted_; }
  const std::vector<double>& means() const noexcept { return means_; }
  const std::vector<double>& scales() const noexcept { return scales_; }

  Matrix apply(const Matrix& x) const;
  double apply(std::size_t column, double value) const;

 private:
  std::vector<double> means_;
  std::vector<double> scales_;
  bool fitted_ = false;
};

/// Hourly gust from 5-minute readings: max of the :50, :55 and :00 readings
/// for each top of the hour that has at least one of them.
std::vector<std::pair<Timestamp, double>> hourly_gust_from_5min(
    const std::vector<std::pair<Timestamp, double>>& readings);

/// Keeps records whose coordinates lie at least `margin` degrees inside the box.
RecordSet filter_bbox(const RecordSet& set, double lat_min, double lat_max, double lon_min,
                      double lon_max, double margin = 0.0);

}  // namespace gustuq::data
