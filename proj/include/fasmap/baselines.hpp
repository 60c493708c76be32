#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fasmap/antenna.hpp"
#include "fasmap/error.hpp"
#include "fasmap/log.hpp"
#include "fasmap/parallel.hpp"
#include "fasmap/sampling.hpp"
#include "fasmap/solver.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

/// Physical spacing between neighbouring cell centers, in meters.
struct GridSpacing {
  double dx = 1.0;  // along j
  double dy = 1.0;  // along i
};

struct KnnParams {
  int k = 5;
  double power = 2.0;
};

struct KrigingParams {
  int lag_bins = 15;
  std::size_t min_observations = 10;
  /// Range used when the variogram fit fails.
  double fallback_range_m = 10.0;
};

struct BaselineParams {
  KnnParams knn;
  KrigingParams kriging;
  int threads = 1;

  void validate() const {
    if (knn.k < 1) throw ConfigError("knn.k must be >= 1");
    if (!(knn.power > 0.0)) throw ConfigError("knn.power must be > 0");
    if (kriging.lag_bins < 2) throw ConfigError("kriging.lag_bins must be >= 2");
    if (kriging.min_observations < 2) throw ConfigError("kriging.min_observations must be >= 2");
    if (!(kriging.fallback_range_m > 0.0)) throw ConfigError("kriging.fallback_range_m must be > 0");
  }
};

namespace detail {

struct Slice {
  std::vector<std::size_t> cells;  // flat i * J + j
  std::vector<double> values;
};

inline Slice observed_slice(const ObservationSet& obs, std::size_t m) {
  const Dims& d = obs.dims();
  Slice s;
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j)
      if (obs.observed(i, j, m)) {
        s.cells.push_back(i * d.cols + j);
        s.values.push_back(obs.y(i, j, m));
      }
  return s;
}

inline void require_slices(const ObservationSet& obs, std::size_t minimum, const char* method) {
  std::string empty;
  for (std::size_t m = 0; m < obs.dims().modes; ++m) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < obs.dims().rows; ++i)
      for (std::size_t j = 0; j < obs.dims().cols; ++j) count += obs.observed(i, j, m) ? 1 : 0;
    if (count < minimum)
      empty += (empty.empty() ? "" : ", ") + std::to_string(m) + " (" + std::to_string(count) + ")";
  }
  if (!empty.empty())
    throw DimensionError(std::string(method) + " needs >= " + std::to_string(minimum) +
                         " observations per mode slice; short slices: " + empty);
}

inline double cell_distance(std::size_t a, std::size_t b, std::size_t cols, const GridSpacing& g) {
  const double di = (static_cast<double>(a / cols) - static_cast<double>(b / cols)) * g.dy;
  const double dj = (static_cast<double>(a % cols) - static_cast<double>(b % cols)) * g.dx;
  return std::hypot(di, dj);
}

}  // namespace detail

/// Per-mode inverse-distance weighting over the K nearest observed cells.
/// Observed cells keep their measured values.
inline Tensor3 knn_reconstruct(const ObservationSet& obs, const KnnParams& p,
                               const GridSpacing& g = {}, int threads = 1) {
  if (p.k < 1 || !(p.power > 0.0)) throw ConfigError("knn needs k >= 1 and power > 0");
  detail::require_slices(obs, 1, "knn");
  const Dims& d = obs.dims();
  Tensor3 out(d);
  parallel_for(d.modes, threads, [&](std::size_t m) {
    const auto slice = detail::observed_slice(obs, m);
    const std::size_t n = slice.cells.size();
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(p.k), n);
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t cell = 0; cell < d.cells(); ++cell) {
      const std::size_t i = cell / d.cols, j = cell % d.cols;
      if (obs.observed(i, j, m)) {
        out(i, j, m) = obs.y(i, j, m);
        continue;
      }
      for (std::size_t q = 0; q < n; ++q)
        dist[q] = {detail::cell_distance(cell, slice.cells[q], d.cols, g), q};
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      double num = 0.0, den = 0.0;
      for (std::size_t q = 0; q < k; ++q) {
        const double w = 1.0 / std::pow(dist[q].first, p.power);
        num += w * slice.values[dist[q].second];
        den += w;
      }
      out(i, j, m) = num / den;
    }
  });
  return out;
}

/// gamma(h) = nugget + (sill - nugget) (1 - exp(-h / range)) for h > 0, 0 at h = 0.
struct VariogramModel {
  double nugget = 0.0;
  double sill = 0.0;
  double range = 1.0;
  bool fitted = false;  // false when the fallback was used

  double operator()(double h) const {
    if (h <= 0.0) return 0.0;
    return nugget + (sill - nugget) * (1.0 - std::exp(-h / range));
  }
};

struct EmpiricalVariogram {
  std::vector<double> lag;
  std::vector<double> gamma;
  std::vector<std::size_t> count;
};

/// Binned semivariance over [0, max_dist / 2] with equal-width bins; empty
/// bins are dropped.
inline EmpiricalVariogram empirical_variogram(const std::vector<Eigen::Vector2d>& pts,
                                              const std::vector<double>& v, int bins) {
  const std::size_t n = pts.size();
  double max_d = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) max_d = std::max(max_d, (pts[a] - pts[b]).norm());
  const double cutoff = max_d / 2.0;
  std::vector<double> lag_sum(bins, 0.0), gamma_sum(bins, 0.0);
  std::vector<std::size_t> cnt(bins, 0);
  if (cutoff > 0.0) {
    const double width = cutoff / bins;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        const double h = (pts[a] - pts[b]).norm();
        if (h <= 0.0 || h > cutoff) continue;
        const int bin = std::min(bins - 1, static_cast<int>(std::ceil(h / width)) - 1);
        lag_sum[bin] += h;
        gamma_sum[bin] += 0.5 * (v[a] - v[b]) * (v[a] - v[b]);
        ++cnt[bin];
      }
  }
  EmpiricalVariogram ev;
  for (int b = 0; b < bins; ++b)
    if (cnt[b] > 0) {
      ev.lag.push_back(lag_sum[b] / cnt[b]);
      ev.gamma.push_back(gamma_sum[b] / cnt[b]);
      ev.count.push_back(cnt[b]);
    }
  return ev;
}

namespace detail {

// Weighted nonnegative least squares for gamma ~ c0 + c1 f over two
// coefficients. Returns the weighted residual sum of squares.
inline double fit_linear_pair(const std::vector<double>& f, const std::vector<double>& y,
                              const std::vector<double>& w, double& c0, double& c1) {
  const std::size_t n = y.size();
  auto rss = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t q = 0; q < n; ++q) s += w[q] * (a + b * f[q] - y[q]) * (a + b * f[q] - y[q]);
    return s;
  };
  double sw = 0, sf = 0, sy = 0, sff = 0, sfy = 0;
  for (std::size_t q = 0; q < n; ++q) {
    sw += w[q];
    sf += w[q] * f[q];
    sy += w[q] * y[q];
    sff += w[q] * f[q] * f[q];
    sfy += w[q] * f[q] * y[q];
  }
  const double det = sw * sff - sf * sf;
  if (det > 1e-14 * sw * sff) {
    const double b = (sw * sfy - sf * sy) / det;
    const double a = (sy - b * sf) / sw;
    if (a >= 0.0 && b >= 0.0) {
      c0 = a;
      c1 = b;
      return rss(a, b);
    }
  }
  // Boundary candidates: one coefficient pinned at zero.
  const double a_only = std::max(0.0, sy / sw);
  const double b_only = sff > 0.0 ? std::max(0.0, sfy / sff) : 0.0;
  const double r_a = rss(a_only, 0.0), r_b = rss(0.0, b_only);
  if (r_b <= r_a) {
    c0 = 0.0;
    c1 = b_only;
    return r_b;
  }
  c0 = a_only;
  c1 = 0.0;
  return r_a;
}

}  // namespace detail

/// Weighted least-squares exponential variogram fit, bins weighted by
/// N_h / h^2 so the short lags that drive Kriging weights dominate. The range
/// is profiled over a log grid and refined by golden-section search; nugget
/// and partial sill are nonnegative linear least squares for each candidate
/// range. Returns nullopt when there are fewer than three lag bins or the fit
/// is degenerate.
inline std::optional<VariogramModel> fit_variogram(const EmpiricalVariogram& ev) {
  const std::size_t n = ev.lag.size();
  if (n < 3) return std::nullopt;
  const double max_lag = *std::max_element(ev.lag.begin(), ev.lag.end());
  const double min_lag = *std::min_element(ev.lag.begin(), ev.lag.end());
  std::vector<double> f(n), w(n);
  for (std::size_t q = 0; q < n; ++q) w[q] = static_cast<double>(ev.count[q]) / (ev.lag[q] * ev.lag[q]);
  auto cost = [&](double log_range, double& c0, double& c1) {
    const double r = std::exp(log_range);
    for (std::size_t q = 0; q < n; ++q) f[q] = 1.0 - std::exp(-ev.lag[q] / r);
    return detail::fit_linear_pair(f, ev.gamma, w, c0, c1);
  };
  const double lo = std::log(min_lag * 1e-2), hi = std::log(max_lag * 1e2);
  constexpr int kGrid = 60;
  double best_x = lo, best = std::numeric_limits<double>::infinity(), c0 = 0, c1 = 0;
  for (int g = 0; g <= kGrid; ++g) {
    const double x = lo + (hi - lo) * g / kGrid;
    const double c = cost(x, c0, c1);
    if (c < best) {
      best = c;
      best_x = x;
    }
  }
  const double step = (hi - lo) / kGrid;
  double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = cost(x1, c0, c1), f2 = cost(x2, c0, c1);
  for (int it = 0; it < 80; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = cost(x1, c0, c1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = cost(x2, c0, c1);
    }
  }
  double x = 0.5 * (a + b);
  if (cost(x, c0, c1) > best) cost(x = best_x, c0, c1);
  VariogramModel v;
  v.nugget = c0;
  v.sill = c0 + c1;
  v.range = std::exp(x);
  v.fitted = true;
  if (!std::isfinite(v.sill) || !std::isfinite(v.range) || !(v.sill > 0.0)) return std::nullopt;
  return v;
}

namespace detail {

inline Eigen::VectorXd krige_slice(const std::vector<Eigen::Vector2d>& pts, const std::vector<double>& v,
                                   const std::vector<Eigen::Vector2d>& queries, VariogramModel model,
                                   std::size_t slice) {
  const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
  const Eigen::Index nq = static_cast<Eigen::Index>(queries.size());
  auto build = [&](const VariogramModel& md) {
    Eigen::MatrixXd k(n + 1, n + 1);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) k(a, b) = md((pts[a] - pts[b]).norm());
      k(a, n) = k(n, a) = 1.0;
    }
    k(n, n) = 0.0;
    return k;
  };
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(build(model));
  for (int attempt = 0; lu.rcond() < 1e-13 && attempt < 6; ++attempt) {
    model.nugget += 1e-6 * model.sill;
    model.sill = std::max(model.sill, model.nugget);
    log::warn("kriging system near singular in mode " + std::to_string(slice) +
              "; nugget raised to " + std::to_string(model.nugget));
    lu.compute(build(model));
  }
  Eigen::MatrixXd rhs(n + 1, nq);
  for (Eigen::Index q = 0; q < nq; ++q) {
    for (Eigen::Index a = 0; a < n; ++a) rhs(a, q) = model((queries[q] - pts[a]).norm());
    rhs(n, q) = 1.0;
  }
  const Eigen::MatrixXd w = lu.solve(rhs);
  const Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(v.data(), n);
  Eigen::VectorXd pred = w.topRows(n).transpose() * values;
  if (!pred.allFinite()) throw NumericalError("kriging produced non-finite values in mode " + std::to_string(slice));
  return pred;
}

}  // namespace detail

/// Per-mode ordinary Kriging with a fitted exponential variogram and the
/// global neighbourhood. Observed cells are retained.
inline Tensor3 kriging_reconstruct(const ObservationSet& obs, const KrigingParams& p = {},
                                   const GridSpacing& g = {}, int threads = 1) {
  detail::require_slices(obs, p.min_observations, "kriging");
  const Dims& d = obs.dims();
  Tensor3 out(d);
  auto center = [&](std::size_t cell) {
    return Eigen::Vector2d((static_cast<double>(cell % d.cols) + 0.5) * g.dx,
                           (static_cast<double>(cell / d.cols) + 0.5) * g.dy);
  };
  parallel_for(d.modes, threads, [&](std::size_t m) {
    const auto slice = detail::observed_slice(obs, m);
    std::vector<Eigen::Vector2d> pts;
    for (std::size_t c : slice.cells) pts.push_back(center(c));
    std::vector<std::size_t> query_cells;
    std::vector<Eigen::Vector2d> queries;
    for (std::size_t cell = 0; cell < d.cells(); ++cell) {
      const std::size_t i = cell / d.cols, j = cell % d.cols;
      if (obs.observed(i, j, m))
        out(i, j, m) = obs.y(i, j, m);
      else {
        query_cells.push_back(cell);
        queries.push_back(center(cell));
      }
    }
    if (queries.empty()) return;

    const double mean = std::accumulate(slice.values.begin(), slice.values.end(), 0.0) /
                        static_cast<double>(slice.values.size());
    double var = 0.0;
    for (double x : slice.values) var += (x - mean) * (x - mean);
    var /= static_cast<double>(slice.values.size());
    if (var == 0.0) {
      for (std::size_t c : query_cells) out(c / d.cols, c % d.cols, m) = mean;
      return;
    }

    auto model = fit_variogram(empirical_variogram(pts, slice.values, p.lag_bins));
    if (!model) {
      log::warn("variogram fit failed in mode " + std::to_string(m) + "; using fallback model");
      model = VariogramModel{0.0, var, p.fallback_range_m, false};
    }
    const Eigen::VectorXd pred = detail::krige_slice(pts, slice.values, queries, *model, m);
    for (std::size_t q = 0; q < query_cells.size(); ++q)
      out(query_cells[q] / d.cols, query_cells[q] % d.cols, m) = pred(static_cast<Eigen::Index>(q));
  });
  return out;
}

/// Low-rank completion only: the solver with lambda2 forced to 0.
inline SolveResult lrtc_reconstruct(const ObservationSet& obs, SolverConfig cfg) {
  cfg.lambda2 = 0.0;
  DifferentialPrior none{Tensor3(obs.dims()), {}};
  return solve(obs, none, cfg);
}

/// Physics prior only: the solver with lambda1 forced to 0.
inline SolveResult pr_only_reconstruct(const ObservationSet& obs, const DifferentialPrior& prior,
                                       SolverConfig cfg) {
  cfg.lambda1 = 0.0;
  return solve(obs, prior, cfg);
}

}  // namespace fasmap
