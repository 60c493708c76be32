#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fasmap/error.hpp"

namespace fasmap {

/// Shape of a location x location x mode tensor.
struct Dims {
  std::size_t rows = 0;   // I, indexes y
  std::size_t cols = 0;   // J, indexes x
  std::size_t modes = 0;  // M

  std::size_t size() const { return rows * cols * modes; }
  std::size_t cells() const { return rows * cols; }
  std::size_t extent(int k) const {
    switch (k) {
      case 1: return rows;
      case 2: return cols;
      case 3: return modes;
      default: throw DimensionError("mode index must be 1, 2 or 3");
    }
  }
  friend bool operator==(const Dims&, const Dims&) = default;

  std::string str() const {
    std::ostringstream os;
    os << rows << "x" << cols << "x" << modes;
    return os.str();
  }
};

struct Index3 {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t m = 0;
  friend bool operator==(const Index3&, const Index3&) = default;
};

/// Dense real 3-way tensor, stored i-major, then j, then m (m fastest).
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Dims dims, double fill = 0.0) : dims_(dims), data_(dims.size(), fill) {}

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t i, std::size_t j, std::size_t m) const {
    return (i * dims_.cols + j) * dims_.modes + m;
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t m) { return data_[offset(i, j, m)]; }
  double operator()(std::size_t i, std::size_t j, std::size_t m) const {
    return data_[offset(i, j, m)];
  }
  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// The M-vector of mode values at cell (i, j).
  Eigen::Map<Eigen::VectorXd> fiber(std::size_t i, std::size_t j) {
    return {data_.data() + offset(i, j, 0), static_cast<Eigen::Index>(dims_.modes)};
  }
  Eigen::Map<const Eigen::VectorXd> fiber(std::size_t i, std::size_t j) const {
    return {data_.data() + offset(i, j, 0), static_cast<Eigen::Index>(dims_.modes)};
  }

  Eigen::Map<Eigen::VectorXd> flat() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<const Eigen::VectorXd> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  double frobenius_norm() const { return flat().norm(); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor3& operator+=(const Tensor3& o) {
    require_same(o);
    flat() += o.flat();
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    require_same(o);
    flat() -= o.flat();
    return *this;
  }
  Tensor3& operator*=(double s) {
    flat() *= s;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(Tensor3 a, double s) { return a *= s; }

  void require_same(const Tensor3& o) const {
    if (!(dims_ == o.dims_))
      throw DimensionError("tensor dims " + dims_.str() + " vs " + o.dims_.str());
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Dims dims_{};
  std::vector<double> data_;
};

inline double frobenius_distance(const Tensor3& a, const Tensor3& b) {
  a.require_same(b);
  return (a.flat() - b.flat()).norm();
}

inline double inner_product(const Tensor3& a, const Tensor3& b) {
  a.require_same(b);
  return a.flat().dot(b.flat());
}

}  // namespace fasmap
