#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <string>
#include <sstream>

#include "fasmap/error.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

/// Mode-k matricization of a 3-way tensor.
struct Unfolding {
  int mode = 1;
  Eigen::MatrixXd matrix;
  Dims source;
};

namespace detail {

inline void check_mode(int k) {
  if (k < 1 || k > 3) throw DimensionError("unfolding mode must be 1, 2 or 3");
}

// Row and column of entry (i, j, m) in the mode-k unfolding. Columns run over
// the remaining indices in increasing mode order, lower mode fastest.
inline std::pair<Eigen::Index, Eigen::Index> unfold_position(const Dims& d, int k, std::size_t i,
                                                             std::size_t j, std::size_t m) {
  switch (k) {
    case 1: return {static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + d.cols * m)};
    case 2: return {static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i + d.rows * m)};
    default: return {static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i + d.rows * j)};
  }
}

}  // namespace detail

inline Unfolding unfold(const Tensor3& x, int k) {
  detail::check_mode(k);
  const Dims& d = x.dims();
  const auto rows = static_cast<Eigen::Index>(d.extent(k));
  const auto cols = static_cast<Eigen::Index>(d.size() / d.extent(k));
  Unfolding u{k, Eigen::MatrixXd(rows, cols), d};
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j)
      for (std::size_t m = 0; m < d.modes; ++m) {
        const auto [r, c] = detail::unfold_position(d, k, i, j, m);
        u.matrix(r, c) = x(i, j, m);
      }
  return u;
}

inline Tensor3 fold(const Eigen::MatrixXd& matrix, int k, const Dims& d) {
  detail::check_mode(k);
  if (matrix.rows() != static_cast<Eigen::Index>(d.extent(k)) ||
      matrix.size() != static_cast<Eigen::Index>(d.size()))
    throw DimensionError("matrix shape does not match mode-" + std::to_string(k) +
                         " unfolding of " + d.str());
  Tensor3 x(d);
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j)
      for (std::size_t m = 0; m < d.modes; ++m) {
        const auto [r, c] = detail::unfold_position(d, k, i, j, m);
        x(i, j, m) = matrix(r, c);
      }
  return x;
}

inline Tensor3 fold(const Unfolding& u) { return fold(u.matrix, u.mode, u.source); }

namespace detail {

inline Eigen::BDCSVD<Eigen::MatrixXd> thin_svd(const Eigen::MatrixXd& a, bool vectors) {
  if (!a.allFinite()) throw NumericalError("SVD input contains non-finite entries");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(
      a, vectors ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0);
  if (svd.info() != Eigen::Success) {
    std::ostringstream os;
    os << "SVD did not converge for " << a.rows() << "x" << a.cols()
       << " matrix (frobenius norm " << a.norm() << ")";
    throw NumericalError(os.str());
  }
  return svd;
}

}  // namespace detail

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& a) {
  return detail::thin_svd(a, false).singularValues();
}

inline double nuclear_norm(const Eigen::MatrixXd& a) { return singular_values(a).sum(); }

/// Singular value thresholding: U diag(max(sigma - tau, 0)) V^T, the proximal
/// operator of tau * nuclear norm.
inline Eigen::MatrixXd svt(const Eigen::MatrixXd& a, double tau) {
  if (tau < 0.0) throw ConfigError("SVT threshold must be >= 0");
  if (a.size() == 0) return a;
  const auto svd = detail::thin_svd(a, true);
  const Eigen::VectorXd shrunk = (svd.singularValues().array() - tau).max(0.0);
  Eigen::Index rank = 0;
  while (rank < shrunk.size() && shrunk(rank) > 0.0) ++rank;
  if (rank == 0) return Eigen::MatrixXd::Zero(a.rows(), a.cols());
  return svd.matrixU().leftCols(rank) * shrunk.head(rank).asDiagonal() *
         svd.matrixV().leftCols(rank).transpose();
}

/// Weighted overlapped nuclear norm sum_k w_k ||X_(k)||_*.
inline double overlapped_nuclear_norm(const Tensor3& x, const std::array<double, 3>& weights) {
  double total = 0.0;
  for (int k = 1; k <= 3; ++k)
    if (weights[k - 1] != 0.0) total += weights[k - 1] * nuclear_norm(unfold(x, k).matrix);
  return total;
}

}  // namespace fasmap
