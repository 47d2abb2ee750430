#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "gustuq/common.hpp"
#include "gustuq/evidential.hpp"
#include "gustuq/matrix.hpp"

namespace testing {

using gustuq::Matrix;

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gustuq_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Kolmogorov-Smirnov test of U(0,1) with the asymptotic distribution and
// Stephens' small-sample correction.
inline double ks_uniform_pvalue(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, std::max(static_cast<double>(i + 1) / n - u[i], u[i] - static_cast<double>(i) / n));
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// -log p(y) by direct 2-D trapezoid quadrature of
// N(y | mu, s2) N(mu | gamma, s2 / nu) InvGamma(s2 | alpha, beta)
// over t = log s2 and mu.
inline double nll_quadrature(const gustuq::evidential::NIGParams& p, double y) {
  const double log_norm_ig = p.alpha * std::log(p.beta) - std::lgamma(p.alpha);
  const double t_lo = std::log(p.beta) - 12.0;
  const double t_hi = std::log(p.beta) + 80.0 / (p.alpha + 0.5);
  const int nt = 6000;
  const int nm = 401;
  const double dt = (t_hi - t_lo) / nt;
  double outer = 0.0;
  for (int i = 0; i <= nt; ++i) {
    const double t = t_lo + i * dt;
    const double s2 = std::exp(t);
    const double centre = (y + p.nu * p.gamma) / (1.0 + p.nu);
    const double width = std::sqrt(s2 / (1.0 + p.nu));
    const double lo = centre - 12.0 * width;
    const double dm = 24.0 * width / (nm - 1);
    double inner = 0.0;
    for (int j = 0; j < nm; ++j) {
      const double mu = lo + j * dm;
      const double like = std::exp(-0.5 * (y - mu) * (y - mu) / s2) / std::sqrt(2.0 * std::numbers::pi * s2);
      const double prior =
          std::exp(-0.5 * p.nu * (mu - p.gamma) * (mu - p.gamma) / s2) / std::sqrt(2.0 * std::numbers::pi * s2 / p.nu);
      inner += (j == 0 || j == nm - 1 ? 0.5 : 1.0) * like * prior;
    }
    inner *= dm;
    // InvGamma density in s2 times the Jacobian ds2/dt = s2.
    const double ig = std::exp(log_norm_ig - (p.alpha + 1.0) * t - p.beta / s2) * s2;
    outer += (i == 0 || i == nt ? 0.5 : 1.0) * inner * ig;
  }
  return -std::log(outer * dt);
}

inline gustuq::evidential::NIGParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> g(-3.0, 3.0), nu(0.2, 5.0), a(1.2, 5.0), b(0.2, 5.0);
  return {g(rng), nu(rng), a(rng), b(rng)};
}

struct Synthetic {
  Matrix x;
  std::vector<double> y;
  std::vector<double> true_sd;
};

inline double synthetic_mean(double x) { return std::sin(3.0 * x) + x; }

// y ~ N(sin(3x) + x, (0.1 + |x|)^2), x ~ U[-1, 1]; the feature column holds
// x scaled to unit variance.
inline Synthetic heteroscedastic(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Synthetic s{Matrix(n, 1), std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ux(rng);
    s.x(i, 0) = x / std::sqrt(1.0 / 3.0);
    s.true_sd[i] = 0.1 + std::abs(x);
    s.y[i] = synthetic_mean(x) + s.true_sd[i] * z(rng);
  }
  return s;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Station table in the default schema; gust is a noisy multiple of WS_10m.
inline std::string station_csv(std::size_t storms, std::size_t hours, std::size_t stations, std::uint64_t seed,
                               bool with_target = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::ostringstream out;
  out << "storm_id,timestamp_utc,station_id,lat,lon,WS_10m,WS_850mb,WS_950mb,PBLH,Ustar,wind_dir_deg,"
         "terrain_height_m,lapse_sfc_1km,lapse_sfc_2km";
  if (with_target) out << ",gust_obs";
  out << '\n';
  for (std::size_t s = 0; s < storms; ++s) {
    for (std::size_t h = 0; h < hours; ++h) {
      for (std::size_t k = 0; k < stations; ++k) {
        const double ws = 2.0 + 12.0 * u(rng);
        const double gust = std::max(0.0, 1.5 * ws + (0.5 + 0.1 * ws) * z(rng));
        char ts[32];
        std::snprintf(ts, sizeof ts, "2020-%02zu-10T%02zu:00:00Z", s + 1, h);
        out << 'S' << s << ',' << ts << ",ST" << k << ',' << gustuq::format_double(41.0 + 0.1 * k) << ','
            << gustuq::format_double(-75.0 + 0.1 * k) << ',' << gustuq::format_double(ws) << ','
            << gustuq::format_double(1.4 * ws + z(rng)) << ',' << gustuq::format_double(1.2 * ws + z(rng)) << ','
            << gustuq::format_double(200.0 + 1200.0 * u(rng)) << ',' << gustuq::format_double(0.1 + u(rng))
            << ',' << gustuq::format_double(359.0 * u(rng)) << ',' << gustuq::format_double(800.0 * u(rng))
            << ',' << gustuq::format_double(-9.0 + 6.0 * u(rng)) << ','
            << gustuq::format_double(-8.0 + 4.0 * u(rng));
        if (with_target) out << ',' << gustuq::format_double(gust);
        out << '\n';
      }
    }
  }
  return out.str();
}

inline int run_command(const std::string& command) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

inline std::string capture_stderr(const std::string& command, int* exit_code = nullptr) {
  const auto file = std::filesystem::temp_directory_path() / "gustuq_test_stderr.txt";
  const int status = std::system((command + " >/dev/null 2>" + file.string()).c_str());
  if (exit_code) *exit_code = status == -1 ? -1 : WEXITSTATUS(status);
  return slurp(file);
}

}  // namespace testing
