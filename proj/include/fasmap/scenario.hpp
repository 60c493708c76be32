#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fasmap/error.hpp"
#include "fasmap/rng.hpp"

namespace fasmap {

using Vec2 = Eigen::Vector2d;

/// Closed axis-aligned rectangle.
struct Obstacle {
  Vec2 min_corner = Vec2::Zero();
  Vec2 max_corner = Vec2::Zero();

  bool contains(const Vec2& p) const {
    return p.x() >= min_corner.x() && p.x() <= max_corner.x() && p.y() >= min_corner.y() &&
           p.y() <= max_corner.y();
  }
  bool overlaps(const Obstacle& o) const {
    return min_corner.x() <= o.max_corner.x() && o.min_corner.x() <= max_corner.x() &&
           min_corner.y() <= o.max_corner.y() && o.min_corner.y() <= max_corner.y();
  }
  friend bool operator==(const Obstacle& a, const Obstacle& b) {
    return a.min_corner == b.min_corner && a.max_corner == b.max_corner;
  }
};

/// Deterministic 2D world: region, grid, base station and blockers.
struct Scenario {
  double width_m = 50.0;
  double height_m = 50.0;
  std::size_t rows = 50;  // I, along y
  std::size_t cols = 50;  // J, along x
  Vec2 bs_position{25.0, 25.0};
  std::vector<Obstacle> obstacles;
  std::uint64_t seed = 0;

  double cell_width() const { return width_m / static_cast<double>(cols); }
  double cell_height() const { return height_m / static_cast<double>(rows); }

  void validate() const;
};

struct ScenarioConfig {
  double width_m = 50.0;
  double height_m = 50.0;
  std::size_t rows = 50;
  std::size_t cols = 50;
  Vec2 bs_position{25.0, 25.0};
  std::size_t obstacle_count = 3;
  Vec2 obstacle_size{8.0, 8.0};
  /// When set, these corners are used verbatim and no random placement happens.
  std::optional<std::vector<Obstacle>> fixed_obstacles;
  /// Exclude cells whose center lies inside an obstacle from sampling.
  bool mask_obstacle_cells = false;
};

inline constexpr int kPlacementAttempts = 1000;

inline Vec2 cell_center(const Scenario& s, std::size_t i, std::size_t j) {
  if (i >= s.rows || j >= s.cols)
    throw GeometryError("cell (" + std::to_string(i) + "," + std::to_string(j) +
                        ") outside " + std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                        " grid");
  return {(static_cast<double>(j) + 0.5) * s.cell_width(),
          (static_cast<double>(i) + 0.5) * s.cell_height()};
}

/// Grid cell containing point p (cells are half-open, the far edge clamps).
inline std::pair<std::size_t, std::size_t> containing_cell(const Scenario& s, const Vec2& p) {
  auto clamp_index = [](double v, std::size_t n) {
    const auto idx = static_cast<long long>(std::floor(v));
    return static_cast<std::size_t>(std::clamp<long long>(idx, 0, static_cast<long long>(n) - 1));
  };
  return {clamp_index(p.y() / s.cell_height(), s.rows), clamp_index(p.x() / s.cell_width(), s.cols)};
}

inline void Scenario::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("grid must have at least one row and column");
  if (!(width_m > 0.0) || !(height_m > 0.0)) throw ConfigError("region size must be positive");
  if (bs_position.x() < 0.0 || bs_position.x() > width_m || bs_position.y() < 0.0 ||
      bs_position.y() > height_m)
    throw ConfigError("base station lies outside the region");
  const auto [bi, bj] = containing_cell(*this, bs_position);
  const Vec2 bs_cell = cell_center(*this, bi, bj);
  for (const auto& o : obstacles) {
    if (!(o.min_corner.array() < o.max_corner.array()).all())
      throw ConfigError("obstacle min_corner must be below max_corner componentwise");
    if (o.min_corner.x() < 0.0 || o.min_corner.y() < 0.0 || o.max_corner.x() > width_m ||
        o.max_corner.y() > height_m)
      throw ConfigError("obstacle extends outside the region");
    if (o.contains(bs_cell) || o.contains(bs_position))
      throw ConfigError("obstacle covers the base station cell");
  }
}

/// True iff the open segment (a, b) meets the closed rectangle. Slab clipping
/// on the parametric segment a + t (b - a), t in (0, 1).
inline bool segment_hits_box(const Vec2& a, const Vec2& b, const Obstacle& box) {
  const Vec2 d = b - a;
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 2; ++axis) {
    const double lo = box.min_corner[axis];
    const double hi = box.max_corner[axis];
    if (d[axis] == 0.0) {
      if (a[axis] < lo || a[axis] > hi) return false;
      continue;
    }
    double t0 = (lo - a[axis]) / d[axis];
    double t1 = (hi - a[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return false;
  }
  // [t_enter, t_exit] must meet the open interval (0, 1).
  return t_enter < 1.0 && t_exit > 0.0;
}

/// 1 when the BS-to-r link is unobstructed, 0 otherwise.
inline int los_indicator(const Scenario& s, const Vec2& r) {
  for (const auto& o : s.obstacles)
    if (segment_hits_box(s.bs_position, r, o)) return 0;
  return 1;
}

struct LinkGeometry {
  double distance_m = 0.0;
  double aod_rad = 0.0;  // in [-pi, pi)
};

inline LinkGeometry link_geometry(const Scenario& s, const Vec2& r) {
  const Vec2 d = r - s.bs_position;
  if (d.x() == 0.0 && d.y() == 0.0)
    throw GeometryError("link endpoint coincides with the base station");
  double phi = std::atan2(d.y(), d.x());
  if (phi >= std::numbers::pi) phi -= 2.0 * std::numbers::pi;  // atan2 may return +pi exactly
  return {d.norm(), phi};
}

/// Cell whose center coincides with the BS, if any. Its AoD is undefined.
inline std::optional<std::pair<std::size_t, std::size_t>> degenerate_cell(const Scenario& s) {
  const auto [i, j] = containing_cell(s, s.bs_position);
  if (cell_center(s, i, j) == s.bs_position) return std::make_pair(i, j);
  return std::nullopt;
}

/// Places obstacles for `config`: explicit corners when given, else seeded
/// rejection sampling (no overlap, BS cell kept clear).
inline Scenario generate_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  Scenario s;
  s.width_m = config.width_m;
  s.height_m = config.height_m;
  s.rows = config.rows;
  s.cols = config.cols;
  s.bs_position = config.bs_position;
  s.seed = seed;

  if (config.fixed_obstacles) {
    s.obstacles = *config.fixed_obstacles;
    s.validate();
    return s;
  }
  s.validate();
  if (config.obstacle_count == 0) return s;

  const Vec2 size = config.obstacle_size;
  if (!(size.x() > 0.0 && size.y() > 0.0) || size.x() > s.width_m || size.y() > s.height_m)
    throw ConfigError("obstacle size does not fit in the region");

  const auto [bi, bj] = containing_cell(s, s.bs_position);
  const Vec2 bs_cell = cell_center(s, bi, bj);

  Rng rng(derive_seed(seed, stream::kObstacles));
  std::uniform_real_distribution<double> ux(0.0, s.width_m - size.x());
  std::uniform_real_distribution<double> uy(0.0, s.height_m - size.y());
  int attempts = 0;
  while (s.obstacles.size() < config.obstacle_count) {
    if (attempts++ >= kPlacementAttempts)
      throw ConfigError("could not place " + std::to_string(config.obstacle_count) +
                        " obstacles within " + std::to_string(kPlacementAttempts) +
                        " attempts (region too crowded)");
    const double x = ux(rng);
    const double y = uy(rng);
    Obstacle o{Vec2(x, y), Vec2(x + size.x(), y + size.y())};
    if (o.contains(bs_cell) || o.contains(s.bs_position)) continue;
    if (std::any_of(s.obstacles.begin(), s.obstacles.end(),
                    [&](const Obstacle& other) { return o.overlaps(other); }))
      continue;
    s.obstacles.push_back(o);
  }
  return s;
}

/// LoS flag for every grid cell, row-major I x J.
inline Eigen::MatrixXi los_map(const Scenario& s) {
  Eigen::MatrixXi out(s.rows, s.cols);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out(i, j) = los_indicator(s, cell_center(s, i, j));
  return out;
}

}  // namespace fasmap
