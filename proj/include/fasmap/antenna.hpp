#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <vector>

#include "fasmap/error.hpp"
#include "fasmap/scenario.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

// Mode indices are 0-based throughout the code; mode m here is mode m+1 in the
// usual 1..M numbering.

inline constexpr double kGainFloorDbi = -300.0;
inline constexpr double kDefaultPeakGainDbi = 7.14;
inline constexpr int kCalibrationGridPoints = 3600;

/// Truncated Fourier basis function e^{jk phi} / sqrt(2 pi).
inline std::complex<double> basis_value(int k, double phi) {
  return std::polar(1.0 / std::sqrt(2.0 * std::numbers::pi), static_cast<double>(k) * phi);
}

inline int circular_distance(int p, int q, int modes) {
  const int d = std::abs(p - q) % modes;
  return std::min(d, modes - d);
}

/// Mode weight table over the EADoF-limited basis. Row m holds w_m, column c
/// holds spatial frequency k = c - (R-1)/2.
struct Codebook {
  int modes = 0;
  int eadof = 0;
  double target_corr = 0.0;
  double taper_width = 0.0;  // Gaussian taper width; +inf means uniform
  double c_norm = 1.0;       // linear gain calibration constant
  Eigen::MatrixXcd weights;

  int half_width() const { return (eadof - 1) / 2; }

  /// Mode steering angle: mode m has its main lobe at 2 pi m / M.
  double steering_angle(int m) const { return 2.0 * std::numbers::pi * m / modes; }

  /// |w_p^H w_q|. Eigen's complex dot conjugates its first argument.
  double correlation(int p, int q) const {
    return std::abs(weights.row(p).dot(weights.row(q)));
  }

  /// Uncalibrated far-field pattern G_m(phi).
  std::complex<double> pattern(int m, double phi) const {
    std::complex<double> acc{0.0, 0.0};
    for (int c = 0; c < eadof; ++c) acc += weights(m, c) * basis_value(c - half_width(), phi);
    return acc;
  }
};

namespace detail {

inline Eigen::VectorXd gaussian_taper(int eadof, double width) {
  const int h = (eadof - 1) / 2;
  Eigen::VectorXd a(eadof);
  for (int c = 0; c < eadof; ++c) {
    const double k = c - h;
    a(c) = std::isinf(width) ? 1.0 : std::exp(-k * k / (2.0 * width * width));
  }
  return a / a.norm();
}

// |sum_k a_k^2 e^{jk delta}| for a real symmetric taper.
inline double taper_correlation(const Eigen::VectorXd& a, double delta) {
  const int h = (static_cast<int>(a.size()) - 1) / 2;
  std::complex<double> acc{0.0, 0.0};
  for (Eigen::Index c = 0; c < a.size(); ++c)
    acc += a(c) * a(c) * std::polar(1.0, static_cast<double>(c - h) * delta);
  return std::abs(acc);
}

inline Eigen::MatrixXcd rotated_weights(const Eigen::VectorXd& a, int modes) {
  const int eadof = static_cast<int>(a.size());
  const int h = (eadof - 1) / 2;
  Eigen::MatrixXcd w(modes, eadof);
  for (int m = 0; m < modes; ++m) {
    const double theta = 2.0 * std::numbers::pi * m / modes;
    for (int c = 0; c < eadof; ++c)
      w(m, c) = a(c) * std::polar(1.0, -static_cast<double>(c - h) * theta);
  }
  return w;
}

}  // namespace detail

/// Peak of |G_m(phi)|^2 over a uniform phi grid and all modes.
inline double peak_pattern_power(const Codebook& cb, int grid_points = kCalibrationGridPoints) {
  double peak = 0.0;
  for (int m = 0; m < cb.modes; ++m)
    for (int g = 0; g < grid_points; ++g) {
      const double phi = -std::numbers::pi + 2.0 * std::numbers::pi * g / grid_points;
      peak = std::max(peak, std::norm(cb.pattern(m, phi)));
    }
  return peak;
}

/// Sets c_norm so that the peak gain over (m, phi) equals `peak_gain_dbi`.
inline void calibrate_peak_gain(Codebook& cb, double peak_gain_dbi) {
  const double peak = peak_pattern_power(cb);
  if (!(peak > 0.0)) throw SynthesisError("codebook pattern is identically zero");
  cb.c_norm = std::pow(10.0, peak_gain_dbi / 10.0) / peak;
}

/// Uniform-taper codebook (a_k = 1/sqrt(R)), uncalibrated (c_norm = 1).
inline Codebook uniform_codebook(int modes, int eadof) {
  Codebook cb;
  cb.modes = modes;
  cb.eadof = eadof;
  cb.taper_width = std::numeric_limits<double>::infinity();
  cb.weights = detail::rotated_weights(detail::gaussian_taper(eadof, cb.taper_width), modes);
  cb.target_corr = cb.correlation(0, 1 % modes);
  return cb;
}

/// Phase-rotated Gaussian-tapered codebook whose adjacent-mode correlation
/// equals `target_corr`. The taper width is found by bisection; the
/// correlation of two modes depends only on their circular distance.
inline Codebook synthesize_codebook(int modes, int eadof, double target_corr,
                                    double peak_gain_dbi = kDefaultPeakGainDbi) {
  if (modes < 2) throw ConfigError("codebook needs at least 2 modes");
  if (eadof < 1 || eadof % 2 == 0) throw ConfigError("EADoF must be a positive odd integer");
  if (!(target_corr > 0.0 && target_corr < 1.0))
    throw ConfigError("target correlation must lie in (0, 1)");

  const double delta = 2.0 * std::numbers::pi / modes;
  auto corr_at = [&](double width) {
    return detail::taper_correlation(detail::gaussian_taper(eadof, width), delta);
  };
  // Correlation falls from 1 (taper collapsed onto k = 0) to the uniform-taper
  // value as the width grows.
  double narrow = 1e-3;
  double wide = 1e4;
  const double c_narrow = corr_at(narrow);
  const double c_uniform = corr_at(std::numeric_limits<double>::infinity());
  if (!(target_corr < c_narrow && target_corr > c_uniform)) {
    std::ostringstream os;
    os << "target correlation " << target_corr << " unreachable for M=" << modes
       << ", R=" << eadof << "; achievable range is (" << c_uniform << ", " << c_narrow << ")";
    throw SynthesisError(os.str());
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(narrow * wide);
    (corr_at(mid) > target_corr ? narrow : wide) = mid;
  }
  Codebook cb;
  cb.modes = modes;
  cb.eadof = eadof;
  cb.target_corr = target_corr;
  cb.taper_width = std::sqrt(narrow * wide);
  cb.weights = detail::rotated_weights(detail::gaussian_taper(eadof, cb.taper_width), modes);
  calibrate_peak_gain(cb, peak_gain_dbi);
  return cb;
}

/// Directional gain of mode m toward phi, in dBi.
inline double gain_db(const Codebook& cb, int m, double phi) {
  if (m < 0 || m >= cb.modes) throw ConfigError("mode index out of range");
  const double power = std::norm(cb.pattern(m, phi)) * cb.c_norm;
  if (power < 1e-30) return kGainFloorDbi;
  return 10.0 * std::log10(power);
}

inline Eigen::VectorXd mode_gains_db(const Codebook& cb, double phi) {
  Eigen::VectorXd g(cb.modes);
  for (int m = 0; m < cb.modes; ++m) g(m) = gain_db(cb, m, phi);
  return g;
}

/// Circular first differences v_m - v_{m-1 mod M}.
inline Eigen::VectorXd circular_difference(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  Eigen::VectorXd d(n);
  for (Eigen::Index m = 0; m < n; ++m) d(m) = v(m) - v((m + n - 1) % n);
  return d;
}

/// Mean removal (I - 11^T / M): projection onto the cycle-consistent subspace.
inline Eigen::VectorXd project_cycle_consistent(const Eigen::VectorXd& d) {
  return (d.array() - d.mean()).matrix();
}

/// Per-cell differential gain vectors, already projected.
struct DifferentialPrior {
  Tensor3 d;
  /// Cells whose AoD is undefined (center on the BS); their vector is zero.
  std::vector<Index3> degenerate_cells;

  const Dims& dims() const { return d.dims(); }
};

inline DifferentialPrior differential_prior(const Codebook& cb, const Scenario& s) {
  DifferentialPrior prior{Tensor3(Dims{s.rows, s.cols, static_cast<std::size_t>(cb.modes)}), {}};
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) {
      const Vec2 r = cell_center(s, i, j);
      if (r == s.bs_position) {
        prior.degenerate_cells.push_back({i, j, 0});
        continue;
      }
      const double phi = link_geometry(s, r).aod_rad;
      prior.d.fiber(i, j) = project_cycle_consistent(circular_difference(mode_gains_db(cb, phi)));
    }
  return prior;
}

}  // namespace fasmap
