#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

#include "fasmap/antenna.hpp"
#include "fasmap/error.hpp"
#include "fasmap/log.hpp"
#include "fasmap/rng.hpp"
#include "fasmap/scenario.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

/// Segmented log-distance model constants; kappa selects LoS or NLoS.
struct ChannelParams {
  double p_tx_dbm = 30.0;
  double alpha_los = 2.0;
  double alpha_nlos = 3.8;
  double beta_los_db = 32.4;
  double beta_nlos_db = 35.3;
  double sigma_los_db = 1.0;
  double sigma_nlos_db = 3.0;
  double d_corr_m = 10.0;

  void validate() const {
    if (!(alpha_los > 0.0 && alpha_nlos > 0.0)) throw ConfigError("path-loss exponents must be > 0");
    if (sigma_los_db < 0.0 || sigma_nlos_db < 0.0)
      throw ConfigError("shadowing deviations must be >= 0");
    if (!(d_corr_m > 0.0)) throw ConfigError("decorrelation distance must be > 0");
  }
};

/// Grids with more cells than this use the separable shadowing covariance.
inline constexpr std::size_t kDenseShadowingCells = 4096;

/// Draws zero-mean unit-variance Gaussian fields over the grid with
/// exponential (Gudmundson) correlation exp(-dist / d_corr). The covariance
/// is factorized once; each draw costs one triangular product.
class CorrelatedFieldSampler {
 public:
  CorrelatedFieldSampler(const Scenario& s, double d_corr_m) : rows_(s.rows), cols_(s.cols) {
    if (!(d_corr_m > 0.0)) throw ConfigError("decorrelation distance must be > 0");
    separable_ = s.rows * s.cols > kDenseShadowingCells;
    if (separable_) {
      row_factor_ = factor(axis_covariance(s.rows, s.cell_height(), d_corr_m));
      col_factor_ = factor(axis_covariance(s.cols, s.cell_width(), d_corr_m));
    } else {
      const auto n = static_cast<Eigen::Index>(s.rows * s.cols);
      Eigen::MatrixXd cov(n, n);
      for (std::size_t a = 0; a < s.rows * s.cols; ++a) {
        const Vec2 pa = cell_center(s, a / s.cols, a % s.cols);
        for (std::size_t b = 0; b <= a; ++b) {
          const Vec2 pb = cell_center(s, b / s.cols, b % s.cols);
          const double c = std::exp(-(pa - pb).norm() / d_corr_m);
          cov(a, b) = c;
          cov(b, a) = c;
        }
      }
      dense_factor_ = factor(std::move(cov));
    }
  }

  bool separable() const { return separable_; }

  /// One I x J field.
  Eigen::MatrixXd draw(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    if (separable_) {
      Eigen::MatrixXd z(rows_, cols_);
      for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(rng);
      return row_factor_ * z * col_factor_.transpose();
    }
    Eigen::VectorXd z(static_cast<Eigen::Index>(rows_ * cols_));
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
    const Eigen::VectorXd v = dense_factor_ * z;
    Eigen::MatrixXd out(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) out(i, j) = v(static_cast<Eigen::Index>(i * cols_ + j));
    return out;
  }

 private:
  static Eigen::MatrixXd axis_covariance(std::size_t n, double spacing, double d_corr) {
    Eigen::MatrixXd c(n, n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        c(a, b) = std::exp(-std::abs(static_cast<double>(a) - static_cast<double>(b)) * spacing /
                           d_corr);
    return c;
  }

  static Eigen::MatrixXd factor(Eigen::MatrixXd cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      log::warn("shadowing covariance not positive definite; retrying with 1e-8 diagonal jitter");
      cov.diagonal().array() += 1e-8;
      llt.compute(cov);
      if (llt.info() != Eigen::Success)
        throw NumericalError("shadowing covariance factorization failed after jitter");
    }
    return llt.matrixL();
  }

  std::size_t rows_;
  std::size_t cols_;
  bool separable_ = false;
  Eigen::MatrixXd dense_factor_;
  Eigen::MatrixXd row_factor_;
  Eigen::MatrixXd col_factor_;
};

/// Standard-normal correlated field for `seed`.
inline Eigen::MatrixXd correlated_normal_field(const Scenario& s, double d_corr_m,
                                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, stream::kShadowing));
  return CorrelatedFieldSampler(s, d_corr_m).draw(rng);
}

/// Shadowing in dB: one correlated field scaled cellwise by sigma_los or
/// sigma_nlos according to the cell's LoS flag.
inline Eigen::MatrixXd scale_shadowing(const Eigen::MatrixXd& unit_field, const Eigen::MatrixXi& los,
                                       const ChannelParams& p) {
  Eigen::MatrixXd out(unit_field.rows(), unit_field.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = unit_field(i, j) * (los(i, j) ? p.sigma_los_db : p.sigma_nlos_db);
  return out;
}

inline Eigen::MatrixXd shadowing_field(const Scenario& s, const ChannelParams& p,
                                       std::uint64_t seed) {
  p.validate();
  if (p.sigma_los_db == 0.0 && p.sigma_nlos_db == 0.0)
    return Eigen::MatrixXd::Zero(s.rows, s.cols);
  return scale_shadowing(correlated_normal_field(s, p.d_corr_m, seed), los_map(s), p);
}

/// Mode-independent part of the RSS: P_tx - PL_kappa(d) + eps.
inline double path_loss_db(const ChannelParams& p, int los, double distance_m) {
  const double alpha = los ? p.alpha_los : p.alpha_nlos;
  const double beta = los ? p.beta_los_db : p.beta_nlos_db;
  return alpha * 10.0 * std::log10(distance_m) + beta;
}

/// Link geometry used for a cell. The cell centered exactly on the BS has no
/// AoD; it is evaluated at phi = 0 and half the smaller cell side.
inline LinkGeometry cell_link(const Scenario& s, std::size_t i, std::size_t j) {
  const Vec2 r = cell_center(s, i, j);
  if (r == s.bs_position) return {0.5 * std::min(s.cell_width(), s.cell_height()), 0.0};
  return link_geometry(s, r);
}

/// Ground-truth RSS tensor (dBm) with an explicitly supplied shadowing field.
inline Tensor3 rss_tensor(const Scenario& s, const Codebook& cb, const ChannelParams& p,
                          const Eigen::MatrixXd& shadowing_db) {
  if (static_cast<std::size_t>(shadowing_db.rows()) != s.rows ||
      static_cast<std::size_t>(shadowing_db.cols()) != s.cols)
    throw DimensionError("shadowing field does not match the grid");
  Tensor3 x(Dims{s.rows, s.cols, static_cast<std::size_t>(cb.modes)});
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) {
      const LinkGeometry link = cell_link(s, i, j);
      const int los = los_indicator(s, cell_center(s, i, j));
      const double common = p.p_tx_dbm - path_loss_db(p, los, link.distance_m) + shadowing_db(i, j);
      for (int m = 0; m < cb.modes; ++m)
        x(i, j, static_cast<std::size_t>(m)) = common + gain_db(cb, m, link.aod_rad);
    }
  return x;
}

inline Tensor3 ground_truth_tensor(const Scenario& s, const Codebook& cb, const ChannelParams& p,
                                   std::uint64_t seed) {
  return rss_tensor(s, cb, p, shadowing_field(s, p, seed));
}

}  // namespace fasmap
