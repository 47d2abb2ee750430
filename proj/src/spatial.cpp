#include "gustuq/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "gustuq/common.hpp"
#include "gustuq/csv.hpp"

namespace gustuq::spatial {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool strictly_monotone(const std::vector<double>& axis) {
  if (axis.size() < 2) return true;
  const bool increasing = axis[1] > axis[0];
  for (std::size_t i = 1; i < axis.size(); ++i) {
    if (increasing ? !(axis[i] > axis[i - 1]) : !(axis[i] < axis[i - 1])) return false;
  }
  return true;
}

// Index i with x between axis[i] and axis[i+1] (inclusive); nullopt outside.
std::optional<std::size_t> bracket(const std::vector<double>& axis, double x) {
  const std::size_t n = axis.size();
  if (n < 2) return std::nullopt;
  const bool increasing = axis[1] > axis[0];
  const double lo = increasing ? axis.front() : axis.back();
  const double hi = increasing ? axis.back() : axis.front();
  if (!(x >= lo && x <= hi)) return std::nullopt;
  std::size_t i = 0;
  if (increasing) {
    auto it = std::upper_bound(axis.begin(), axis.end(), x);
    i = static_cast<std::size_t>(it - axis.begin());
    i = i == 0 ? 0 : i - 1;
  } else {
    auto it = std::upper_bound(axis.begin(), axis.end(), x, std::greater<>());
    i = static_cast<std::size_t>(it - axis.begin());
    i = i == 0 ? 0 : i - 1;
  }
  return std::min(i, n - 2);
}

}  // namespace

void GridField::validate() const {
  if (values.rows() != lats.size() || values.cols() != lons.size()) {
    throw DimensionError("grid values are " + std::to_string(values.rows()) + "x" +
                         std::to_string(values.cols()) + " but axes are " +
                         std::to_string(lats.size()) + "x" + std::to_string(lons.size()));
  }
  if (!mask.empty() && mask.size() != values.size()) throw DimensionError("mask size does not match grid");
  if (!strictly_monotone(lats) || !strictly_monotone(lons)) {
    throw UsageError("grid axes must be strictly monotone");
  }
}

GridField make_field(std::vector<double> lats, std::vector<double> lons, Matrix values) {
  GridField f{std::move(lats), std::move(lons), std::move(values), {}};
  f.validate();
  return f;
}

GridField spatial_gradient(const GridField& field) {
  field.validate();
  const std::size_t rows = field.rows();
  const std::size_t cols = field.cols();
  if (rows < 2 || cols < 2) throw UsageError("spatial gradient needs a grid of at least 2x2");

  GridField out{field.lats, field.lons, Matrix(rows, cols), std::vector<std::uint8_t>(rows * cols, 0)};
  constexpr int kOffsets[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!field.valid(r, c)) continue;
      double sum = 0.0;
      int used = 0;
      for (const auto& off : kOffsets) {
        const auto nr = static_cast<std::ptrdiff_t>(r) + off[0];
        const auto nc = static_cast<std::ptrdiff_t>(c) + off[1];
        if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(rows) ||
            nc >= static_cast<std::ptrdiff_t>(cols)) {
          continue;
        }
        const auto ur = static_cast<std::size_t>(nr);
        const auto uc = static_cast<std::size_t>(nc);
        if (!field.valid(ur, uc)) continue;
        const double dlat = field.lats[ur] - field.lats[r];
        const double dlon = field.lons[uc] - field.lons[c];
        sum += std::abs(field.values(ur, uc) - field.values(r, c)) / std::sqrt(dlon * dlon + dlat * dlat);
        ++used;
      }
      if (used > 0) {
        out.values(r, c) = sum / used;
        out.mask[r * cols + c] = 1;
      }
    }
  }
  return out;
}

std::vector<double> minmax_normalize(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("cannot normalize an empty series");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double vmin = *lo;
  const double vmax = *hi;
  if (!(vmax > vmin)) throw UsageError("cannot min-max normalize a constant series (max == min)");
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - vmin) / (vmax - vmin);
  return out;
}

GridField minmax_normalize(const GridField& field) {
  field.validate();
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -vmin;
  for (std::size_t r = 0; r < field.rows(); ++r) {
    for (std::size_t c = 0; c < field.cols(); ++c) {
      if (!field.valid(r, c)) continue;
      vmin = std::min(vmin, field.values(r, c));
      vmax = std::max(vmax, field.values(r, c));
    }
  }
  if (!(vmax > vmin)) throw UsageError("cannot min-max normalize a constant field (max == min)");
  GridField out = field;
  for (std::size_t r = 0; r < field.rows(); ++r) {
    for (std::size_t c = 0; c < field.cols(); ++c) {
      if (field.valid(r, c)) out.values(r, c) = (field.values(r, c) - vmin) / (vmax - vmin);
    }
  }
  return out;
}

std::vector<MaxLocation> track_spatial_max(const std::vector<GridField>& fields) {
  if (fields.empty()) throw UsageError("spatial max tracking needs at least one time step");
  std::vector<MaxLocation> track;
  for (std::size_t h = 0; h < fields.size(); ++h) {
    const GridField& f = fields[h];
    f.validate();
    std::optional<MaxLocation> best;
    for (std::size_t r = 0; r < f.rows(); ++r) {
      for (std::size_t c = 0; c < f.cols(); ++c) {
        if (!f.valid(r, c)) continue;
        const double v = f.values(r, c);
        if (!best || v > best->value) best = MaxLocation{h, v, r, c, f.lats[r], f.lons[c]};
      }
    }
    if (best) {
      track.push_back(*best);
    } else {
      warn("spatial max: time step " + std::to_string(h) + " is fully masked; skipped");
    }
  }
  return track;
}

double alignment_fraction(const std::vector<MaxLocation>& a, const std::vector<MaxLocation>& b,
                          std::size_t k) {
  std::map<std::size_t, const MaxLocation*> by_hour;
  for (const auto& m : b) by_hour[m.hour] = &m;
  std::size_t shared = 0;
  std::size_t aligned = 0;
  for (const auto& m : a) {
    auto it = by_hour.find(m.hour);
    if (it == by_hour.end()) continue;
    ++shared;
    const auto dr = m.row > it->second->row ? m.row - it->second->row : it->second->row - m.row;
    const auto dc = m.col > it->second->col ? m.col - it->second->col : it->second->col - m.col;
    if (std::max(dr, dc) <= k) ++aligned;
  }
  return shared == 0 ? kNaN : static_cast<double>(aligned) / static_cast<double>(shared);
}

const char* to_string(StationStatus status) {
  switch (status) {
    case StationStatus::Ok: return "ok";
    case StationStatus::Fallback: return "fallback";
    case StationStatus::OutOfDomain: return "out_of_domain";
  }
  return "unknown";
}

double bilinear_at(const GridField& field, double lat, double lon, bool* fallback) {
  const auto ri = bracket(field.lats, lat);
  const auto ci = bracket(field.lons, lon);
  if (!ri || !ci) {
    throw OutOfDomainError("point (" + format_double(lat) + ", " + format_double(lon) +
                           ") lies outside the grid hull");
  }
  const std::size_t r = *ri;
  const std::size_t c = *ci;
  if (fallback) *fallback = false;

  if (!(field.valid(r, c) && field.valid(r + 1, c) && field.valid(r, c + 1) && field.valid(r + 1, c + 1))) {
    double best = std::numeric_limits<double>::infinity();
    std::optional<double> value;
    for (std::size_t i = 0; i < field.rows(); ++i) {
      for (std::size_t j = 0; j < field.cols(); ++j) {
        if (!field.valid(i, j)) continue;
        const double d = std::hypot(field.lats[i] - lat, field.lons[j] - lon);
        if (d < best) {
          best = d;
          value = field.values(i, j);
        }
      }
    }
    if (!value) throw OutOfDomainError("grid has no valid cell for fallback");
    if (fallback) *fallback = true;
    return *value;
  }

  const double t = (lat - field.lats[r]) / (field.lats[r + 1] - field.lats[r]);
  const double u = (lon - field.lons[c]) / (field.lons[c + 1] - field.lons[c]);
  return (1.0 - t) * (1.0 - u) * field.values(r, c) + (1.0 - t) * u * field.values(r, c + 1) +
         t * (1.0 - u) * field.values(r + 1, c) + t * u * field.values(r + 1, c + 1);
}

std::vector<StationValue> bilinear_to_stations(const GridField& field,
                                               const std::vector<Station>& stations) {
  field.validate();
  std::vector<StationValue> out;
  out.reserve(stations.size());
  for (const auto& s : stations) {
    StationValue v{s.id, kNaN, StationStatus::Ok};
    try {
      bool fb = false;
      v.value = bilinear_at(field, s.lat, s.lon, &fb);
      v.status = fb ? StationStatus::Fallback : StationStatus::Ok;
    } catch (const OutOfDomainError& e) {
      v.status = StationStatus::OutOfDomain;
      warn("station " + s.id + ": " + e.what());
    }
    out.push_back(v);
  }
  return out;
}

std::string write_grid_csv(const GridSeries& series) {
  if (series.times.size() != series.fields.size()) throw DimensionError("times and fields differ in length");
  std::ostringstream out;
  out << "time,lat,lon,value\n";
  for (std::size_t t = 0; t < series.fields.size(); ++t) {
    const auto& f = series.fields[t];
    for (std::size_t r = 0; r < f.rows(); ++r) {
      for (std::size_t c = 0; c < f.cols(); ++c) {
        if (!f.valid(r, c)) continue;
        out << series.times[t] << ',' << format_double(f.lats[r]) << ',' << format_double(f.lons[c]) << ','
            << format_double(f.values(r, c)) << '\n';
      }
    }
  }
  return out.str();
}

GridSeries read_grid_csv(const std::string& text) {
  const CsvTable table = parse_csv(text);
  const std::size_t it = table.require("time");
  const std::size_t ilat = table.require("lat");
  const std::size_t ilon = table.require("lon");
  const std::size_t ival = table.require("value");

  struct Cell {
    double lat, lon, value;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Cell>> by_time;
  std::vector<double> lats, lons;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    Cell cell{};
    if (!parse_double(row[ilat], cell.lat) || !parse_double(row[ilon], cell.lon) ||
        !parse_double(row[ival], cell.value)) {
      throw IngestError("line " + std::to_string(table.line_numbers[k]) + ": unparsable number");
    }
    auto [pos, inserted] = by_time.try_emplace(row[it]);
    if (inserted) order.push_back(row[it]);
    pos->second.push_back(cell);
    lats.push_back(cell.lat);
    lons.push_back(cell.lon);
  }
  std::sort(lats.begin(), lats.end());
  lats.erase(std::unique(lats.begin(), lats.end()), lats.end());
  std::sort(lons.begin(), lons.end());
  lons.erase(std::unique(lons.begin(), lons.end()), lons.end());

  GridSeries series;
  for (const auto& t : order) {
    GridField f{lats, lons, Matrix(lats.size(), lons.size()),
                std::vector<std::uint8_t>(lats.size() * lons.size(), 0)};
    for (const auto& cell : by_time[t]) {
      const auto r = static_cast<std::size_t>(std::lower_bound(lats.begin(), lats.end(), cell.lat) - lats.begin());
      const auto c = static_cast<std::size_t>(std::lower_bound(lons.begin(), lons.end(), cell.lon) - lons.begin());
      f.values(r, c) = cell.value;
      f.mask[r * lons.size() + c] = 1;
    }
    series.times.push_back(t);
    series.fields.push_back(std::move(f));
  }
  return series;
}

}  // namespace gustuq::spatial
