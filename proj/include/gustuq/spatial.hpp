#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gustuq/matrix.hpp"

namespace gustuq::spatial {

/// Scalar field on a regular lat/lon raster. Row r sits at lats[r], column c
/// at lons[c]; both axes are strictly monotone. An empty mask means every
/// cell is valid, otherwise mask[r * cols + c] != 0 marks a valid cell.
struct GridField {
  std::vector<double> lats;
  std::vector<double> lons;
  Matrix values;
  std::vector<std::uint8_t> mask;

  std::size_t rows() const noexcept { return lats.size(); }
  std::size_t cols() const noexcept { return lons.size(); }
  bool valid(std::size_t r, std::size_t c) const {
    return mask.empty() || mask[r * cols() + c] != 0;
  }
  /// Throws DimensionError/UsageError when axes and values disagree or an
  /// axis is not strictly monotone.
  void validate() const;
};

GridField make_field(std::vector<double> lats, std::vector<double> lons, Matrix values);

/// Mean over the (up to four) valid edge neighbours of
/// |G_neighbour - G_cell| / sqrt(dlon^2 + dlat^2), in field units per
/// degree. Cells with no valid neighbour, or masked themselves, are masked.
GridField spatial_gradient(const GridField& field);

/// (v - min) / (max - min). Throws UsageError for constant input.
std::vector<double> minmax_normalize(const std::vector<double>& values);
/// Same over the valid cells of a field; masked cells are left untouched.
GridField minmax_normalize(const GridField& field);

struct MaxLocation {
  std::size_t hour = 0;
  double value = 0.0;
  std::size_t row = 0;
  std::size_t col = 0;
  double lat = 0.0;
  double lon = 0.0;
};

/// Per time step, the largest valid value and its cell (first in row-major
/// order on ties). Fully masked steps are skipped with a warning.
std::vector<MaxLocation> track_spatial_max(const std::vector<GridField>& fields);

/// Fraction of hours present in both tracks whose argmax cells lie within
/// `k` cells of each other (Chebyshev distance). NaN when no hour is shared.
double alignment_fraction(const std::vector<MaxLocation>& a, const std::vector<MaxLocation>& b,
                          std::size_t k);

struct Station {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<double> elevation;
};

enum class StationStatus { Ok, Fallback, OutOfDomain };
const char* to_string(StationStatus status);

struct StationValue {
  std::string id;
  double value = 0.0;  // NaN when out of domain
  StationStatus status = StationStatus::Ok;
};

/// Bilinear value at (lat, lon). Throws OutOfDomainError outside the grid
/// hull; with any enclosing corner masked, falls back to the nearest valid
/// cell and sets `fallback`.
double bilinear_at(const GridField& field, double lat, double lon, bool* fallback = nullptr);

std::vector<StationValue> bilinear_to_stations(const GridField& field,
                                               const std::vector<Station>& stations);

/// Long-format grid time series: header time,lat,lon,value, one row per
/// valid cell per time step.
struct GridSeries {
  std::vector<std::string> times;
  std::vector<GridField> fields;
};

std::string write_grid_csv(const GridSeries& series);
/// Builds sorted axes from the distinct coordinates; absent cells are masked.
GridSeries read_grid_csv(const std::string& text);

}  // namespace gustuq::spatial
