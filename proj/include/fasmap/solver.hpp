#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fasmap/antenna.hpp"
#include "fasmap/error.hpp"
#include "fasmap/parallel.hpp"
#include "fasmap/sampling.hpp"
#include "fasmap/tensor.hpp"
#include "fasmap/tensor_ops.hpp"

namespace fasmap {

/// Physics-regularized low-rank tensor completion, solved by ADMM over the
/// split X = M_1 = M_2 = M_3:
///
///   min 1/2 ||P_Omega(X - Y)||^2 + lambda2 sum_ij ||A x_ij - d_ij||^2
///       + lambda1 sum_k alpha_k ||X_(k)||_*
///
/// lambda2 = 0 gives plain LRTC, lambda1 = 0 the physics-only ablation.
struct SolverConfig {
  double lambda1 = 0.1;  // low-rank weight
  double lambda2 = 5.0;  // physics weight
  double rho = 1.0;      // ADMM penalty (initial value when adaptive)
  std::array<double, 3> alpha{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double eps_pri = 1e-3;   // on the scaled primal residual
  double eps_dual = 1e-3;  // on the scaled dual residual
  int max_iters = 500;
  /// Residual balancing of rho on the scaled residuals.
  bool adaptive_penalty = true;
  double balance_ratio = 10.0;
  double balance_factor = 2.0;
  /// Evaluate the objective after every iteration (three extra SVDs each).
  bool track_objective = false;
  int threads = 1;

  void validate(bool fully_observed = false) const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be >= 0");
    if (lambda1 == 0.0 && lambda2 == 0.0 && !fully_observed)
      throw ConfigError("lambda1 = lambda2 = 0 is under-determined with partial sampling");
    if (!(rho > 0.0)) throw ConfigError("ADMM penalty rho must be > 0");
    double sum = 0.0;
    for (double a : alpha) {
      if (a < 0.0) throw ConfigError("unfolding weights must be >= 0");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("unfolding weights must sum to 1");
    if (eps_pri < 0.0 || eps_dual < 0.0) throw ConfigError("tolerances must be >= 0");
    if (max_iters < 1) throw ConfigError("max_iters must be positive");
    if (adaptive_penalty && !(balance_ratio > 1.0 && balance_factor > 1.0))
      throw ConfigError("penalty balancing needs ratio > 1 and factor > 1");
  }
};

/// Cyclic first-difference operator (A x)_m = x_m - x_{m-1 mod M} and the
/// cycle-graph Laplacian A^T A.
struct CyclicDifference {
  Eigen::MatrixXd a;
  Eigen::MatrixXd laplacian;

  static CyclicDifference build(int modes) {
    if (modes < 2) throw ConfigError("cyclic difference needs at least 2 modes");
    CyclicDifference c;
    c.a = Eigen::MatrixXd::Zero(modes, modes);
    for (int m = 0; m < modes; ++m) {
      c.a(m, m) = 1.0;
      c.a(m, (m + modes - 1) % modes) = -1.0;
    }
    c.laplacian = c.a.transpose() * c.a;
    return c;
  }
};

enum class Decision { kContinue, kConverged, kMaxIters };

inline const char* to_string(Decision d) {
  switch (d) {
    case Decision::kContinue: return "continue";
    case Decision::kConverged: return "converged";
    case Decision::kMaxIters: return "max_iters";
  }
  return "?";
}

struct IterationRecord {
  int iteration = 0;
  double primal_residual = 0.0;  // max_k ||X - M_k||_F
  double dual_residual = 0.0;    // rho max_k ||M_k - M_k^prev||_F
  double primal_scaled = 0.0;
  double dual_scaled = 0.0;
  double rho = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double elapsed_ms = 0.0;
};

struct SolverState {
  Tensor3 x;
  std::array<Tensor3, 3> m_aux;
  std::array<Tensor3, 3> u_dual;  // scaled duals
  std::array<Tensor3, 3> m_prev;
  int iteration = 0;
  double rho = 1.0;
  std::vector<IterationRecord> history;

  static SolverState zeros(const Dims& d, double rho) {
    SolverState s;
    s.x = Tensor3(d);
    for (int k = 0; k < 3; ++k) {
      s.m_aux[k] = Tensor3(d);
      s.u_dual[k] = Tensor3(d);
      s.m_prev[k] = Tensor3(d);
    }
    s.rho = rho;
    return s;
  }
};

struct ConvergenceReport {
  int iterations = 0;
  Decision decision = Decision::kContinue;
  std::vector<IterationRecord> history;
  double final_objective = 0.0;
  double final_rho = 0.0;
  double wall_ms = 0.0;
  std::string diagnostics;
};

struct SolveResult {
  Tensor3 x;
  ConvergenceReport report;
};

/// Per-cell normal-equation matrices P_ij + 2 lambda2 A^T A + 3 rho I. Cells
/// with the same observation pattern share one Cholesky factor.
class PrimalSystems {
 public:
  PrimalSystems(const Tensor3& mask, const CyclicDifference& cyc, double lambda2)
      : modes_(mask.dims().modes), physics_(2.0 * lambda2 * cyc.laplacian) {
    const Dims& d = mask.dims();
    std::map<std::vector<bool>, std::size_t> index;
    cell_pattern_.resize(d.cells());
    for (std::size_t i = 0; i < d.rows; ++i)
      for (std::size_t j = 0; j < d.cols; ++j) {
        std::vector<bool> key(modes_);
        for (std::size_t m = 0; m < modes_; ++m) key[m] = mask(i, j, m) != 0.0;
        auto [it, inserted] = index.try_emplace(key, patterns_.size());
        if (inserted) {
          Eigen::VectorXd p(modes_);
          for (std::size_t m = 0; m < modes_; ++m) p(m) = key[m] ? 1.0 : 0.0;
          patterns_.push_back(p);
        }
        cell_pattern_[i * d.cols + j] = it->second;
      }
  }

  std::size_t pattern_count() const { return patterns_.size(); }

  Eigen::MatrixXd matrix(std::size_t cell, double rho) const {
    Eigen::MatrixXd k = physics_;
    k.diagonal() += patterns_[cell_pattern_[cell]];
    k.diagonal().array() += 3.0 * rho;
    return k;
  }

  void factor(double rho) {
    if (rho == rho_ && !factors_.empty()) return;
    factors_.clear();
    factors_.reserve(patterns_.size());
    for (std::size_t p = 0; p < patterns_.size(); ++p) {
      Eigen::MatrixXd k = physics_;
      k.diagonal() += patterns_[p];
      k.diagonal().array() += 3.0 * rho;
      factors_.emplace_back(k);
      if (factors_.back().info() != Eigen::Success)
        throw ConfigError("primal system is singular (rho, lambda2 and observations all vanish)");
    }
    rho_ = rho;
  }

  const Eigen::LLT<Eigen::MatrixXd>& system(std::size_t cell) const {
    return factors_[cell_pattern_[cell]];
  }

 private:
  std::size_t modes_;
  Eigen::MatrixXd physics_;
  std::vector<Eigen::VectorXd> patterns_;
  std::vector<std::size_t> cell_pattern_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
  double rho_ = std::numeric_limits<double>::quiet_NaN();
};

/// Right-hand side terms that do not change across iterations:
/// P y + 2 lambda2 A^T d.
inline Tensor3 static_rhs(const ObservationSet& obs, const DifferentialPrior& prior,
                          const CyclicDifference& cyc, double lambda2) {
  const Dims& d = obs.dims();
  Tensor3 b = project_omega(obs.y, obs.mask);
  if (lambda2 == 0.0) return b;
  const Eigen::MatrixXd at = 2.0 * lambda2 * cyc.a.transpose();
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j) b.fiber(i, j) += at * prior.d.fiber(i, j);
  return b;
}

/// Data fidelity + physics penalty + weighted overlapped nuclear norm.
inline double objective(const Tensor3& x, const ObservationSet& obs, const DifferentialPrior& prior,
                        const SolverConfig& cfg, const CyclicDifference& cyc) {
  const double fidelity = 0.5 * (project_omega(x, obs.mask).flat() - project_omega(obs.y, obs.mask).flat())
                                    .squaredNorm();
  double physics = 0.0;
  if (cfg.lambda2 != 0.0) {
    const Dims& d = x.dims();
    for (std::size_t i = 0; i < d.rows; ++i)
      for (std::size_t j = 0; j < d.cols; ++j)
        physics += (cyc.a * x.fiber(i, j) - prior.d.fiber(i, j)).squaredNorm();
  }
  const double low_rank = cfg.lambda1 == 0.0 ? 0.0 : overlapped_nuclear_norm(x, cfg.alpha);
  return fidelity + cfg.lambda2 * physics + cfg.lambda1 * low_rank;
}

/// Scaled-form augmented Lagrangian at the current iterate.
inline double augmented_lagrangian(const SolverState& s, const ObservationSet& obs,
                                   const DifferentialPrior& prior, const SolverConfig& cfg,
                                   const CyclicDifference& cyc) {
  SolverConfig smooth = cfg;
  smooth.lambda1 = 0.0;
  double value = objective(s.x, obs, prior, smooth, cyc);
  for (int k = 0; k < 3; ++k) {
    if (cfg.lambda1 != 0.0 && cfg.alpha[k] != 0.0)
      value += cfg.lambda1 * cfg.alpha[k] * nuclear_norm(unfold(s.m_aux[k], k + 1).matrix);
    value += 0.5 * s.rho *
             ((s.x.flat() - s.m_aux[k].flat() + s.u_dual[k].flat()).squaredNorm() -
              s.u_dual[k].flat().squaredNorm());
  }
  return value;
}

/// X-update: per cell, solve (P + 2 lambda2 A^T A + 3 rho I) x = P y
/// + 2 lambda2 A^T d + rho sum_k (M_k - U_k).
inline void primal_update(SolverState& s, const Tensor3& rhs_static, PrimalSystems& systems,
                          int threads) {
  systems.factor(s.rho);
  const Dims& d = s.x.dims();
  parallel_for(d.cells(), threads, [&](std::size_t cell) {
    const std::size_t i = cell / d.cols;
    const std::size_t j = cell % d.cols;
    Eigen::VectorXd rhs = rhs_static.fiber(i, j);
    for (int k = 0; k < 3; ++k)
      rhs += s.rho * (s.m_aux[k].fiber(i, j) - s.u_dual[k].fiber(i, j));
    s.x.fiber(i, j) = systems.system(cell).solve(rhs);
  });
}

/// Convenience overload that builds the per-cell systems on the fly.
inline void primal_update(SolverState& s, const ObservationSet& obs, const DifferentialPrior& prior,
                          const SolverConfig& cfg) {
  const auto cyc = CyclicDifference::build(static_cast<int>(obs.dims().modes));
  PrimalSystems systems(obs.mask, cyc, cfg.lambda2);
  primal_update(s, static_rhs(obs, prior, cyc, cfg.lambda2), systems, cfg.threads);
}

/// M_k = fold(SVT(unfold(X + U_k), lambda1 alpha_k / rho)).
inline void auxiliary_update(SolverState& s, const SolverConfig& cfg) {
  for (int k = 0; k < 3; ++k) s.m_prev[k] = s.m_aux[k];
  parallel_for(3, cfg.threads, [&](std::size_t k) {
    Tensor3 z = s.x + s.u_dual[k];
    const double tau = cfg.lambda1 * cfg.alpha[k] / s.rho;
    if (tau == 0.0) {
      s.m_aux[k] = std::move(z);
      return;
    }
    const int mode = static_cast<int>(k) + 1;
    s.m_aux[k] = fold(svt(unfold(z, mode).matrix, tau), mode, z.dims());
  });
}

inline void dual_update(SolverState& s) {
  for (int k = 0; k < 3; ++k) s.u_dual[k].flat() += s.x.flat() - s.m_aux[k].flat();
}

inline constexpr double kDualScaleFloor = 1e-3;

/// Records residuals for the iteration just completed and decides whether to
/// stop. Scaled residuals: r / max(||X||, max_k ||M_k||) and
/// s / max(rho max_k ||U_k||, 1e-3 rho ||X||).
inline Decision check_convergence(SolverState& s, const SolverConfig& cfg) {
  double r = 0.0, sd = 0.0, m_norm = 0.0, u_norm = 0.0;
  for (int k = 0; k < 3; ++k) {
    r = std::max(r, frobenius_distance(s.x, s.m_aux[k]));
    sd = std::max(sd, frobenius_distance(s.m_aux[k], s.m_prev[k]));
    m_norm = std::max(m_norm, s.m_aux[k].frobenius_norm());
    u_norm = std::max(u_norm, s.u_dual[k].frobenius_norm());
  }
  const double x_norm = s.x.frobenius_norm();
  const double dual = s.rho * sd;
  const double pri_scale = std::max(x_norm, m_norm);
  const double dual_scale = s.rho * std::max(u_norm, kDualScaleFloor * x_norm);

  IterationRecord rec;
  rec.iteration = s.iteration;
  rec.primal_residual = r;
  rec.dual_residual = dual;
  rec.primal_scaled = r == 0.0 ? 0.0 : r / pri_scale;
  rec.dual_scaled = dual == 0.0 ? 0.0 : dual / dual_scale;
  rec.rho = s.rho;
  s.history.push_back(rec);

  if (rec.primal_scaled <= cfg.eps_pri && rec.dual_scaled <= cfg.eps_dual)
    return Decision::kConverged;
  if (s.iteration >= cfg.max_iters) return Decision::kMaxIters;
  return Decision::kContinue;
}

/// Residual balancing: grow rho when the primal residual dominates, shrink it
/// when the dual one does. U is rescaled so rho U stays fixed.
inline bool adapt_penalty(SolverState& s, const SolverConfig& cfg) {
  if (!cfg.adaptive_penalty || s.history.empty()) return false;
  const auto& rec = s.history.back();
  if (rec.primal_scaled == 0.0 || rec.dual_scaled == 0.0) return false;
  double factor = 1.0;
  if (rec.primal_scaled > cfg.balance_ratio * rec.dual_scaled)
    factor = cfg.balance_factor;
  else if (rec.dual_scaled > cfg.balance_ratio * rec.primal_scaled)
    factor = 1.0 / cfg.balance_factor;
  if (factor == 1.0) return false;
  s.rho *= factor;
  for (auto& u : s.u_dual) u *= 1.0 / factor;
  return true;
}

inline void check_dims(const ObservationSet& obs, const DifferentialPrior& prior) {
  if (!(obs.y.dims() == obs.mask.dims()) || !(obs.dims() == prior.dims()))
    throw DimensionError("observation " + obs.dims().str() + " and prior " + prior.dims().str() +
                         " dims differ");
  if (obs.dims().modes < 2) throw DimensionError("need at least 2 modes");
}

/// Runs ADMM from a zero state until the scaled residuals fall below the
/// tolerances or max_iters is reached. Non-convergence is reported, not thrown.
inline SolveResult solve(const ObservationSet& obs, const DifferentialPrior& prior,
                         const SolverConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  check_dims(obs, prior);
  cfg.validate(obs.omega.size() == obs.dims().size());

  const auto cyc = CyclicDifference::build(static_cast<int>(obs.dims().modes));
  PrimalSystems systems(obs.mask, cyc, cfg.lambda2);
  const Tensor3 rhs = static_rhs(obs, prior, cyc, cfg.lambda2);

  SolverState s = SolverState::zeros(obs.dims(), cfg.rho);
  Decision decision = Decision::kContinue;
  while (decision == Decision::kContinue) {
    ++s.iteration;
    primal_update(s, rhs, systems, cfg.threads);
    auxiliary_update(s, cfg);
    dual_update(s);
    decision = check_convergence(s, cfg);
    auto& rec = s.history.back();
    if (cfg.track_objective) rec.objective = objective(s.x, obs, prior, cfg, cyc);
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    if (decision == Decision::kContinue) adapt_penalty(s, cfg);
  }

  SolveResult out;
  out.report.iterations = s.iteration;
  out.report.decision = decision;
  out.report.final_objective = cfg.track_objective && !std::isnan(s.history.back().objective)
                                   ? s.history.back().objective
                                   : objective(s.x, obs, prior, cfg, cyc);
  out.report.final_rho = s.rho;
  if (decision == Decision::kMaxIters) {
    const auto& last = s.history.back();
    out.report.diagnostics = "stopped at max_iters=" + std::to_string(cfg.max_iters) +
                             " with scaled residuals r=" + std::to_string(last.primal_scaled) +
                             ", s=" + std::to_string(last.dual_scaled);
  }
  out.report.history = std::move(s.history);
  out.x = std::move(s.x);
  out.report.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  return out;
}

}  // namespace fasmap
