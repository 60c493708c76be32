#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "fasmap/harness.hpp"
#include "fasmap/solver.hpp"

using namespace fasmap;

namespace {

Tensor3 random_tensor(const Dims& d, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Tensor3 x(d);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = n(rng);
  return x;
}

DifferentialPrior random_prior(const Dims& d, std::uint64_t seed) {
  DifferentialPrior p{random_tensor(d, seed), {}};
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j) p.d.fiber(i, j) = project_cycle_consistent(p.d.fiber(i, j));
  return p;
}

ObservationSet random_observations(const Dims& d, double ratio, std::uint64_t seed) {
  return sample_observations(random_tensor(d, seed, 5.0), ratio, 0.0, seed + 1);
}

// Normal-equation matrix for one cell, assembled independently of the solver.
Eigen::MatrixXd cell_matrix(const Tensor3& mask, std::size_t i, std::size_t j, double lambda2, double rho) {
  const auto m = static_cast<Eigen::Index>(mask.dims().modes);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    a(r, r) = 1.0;
    a(r, (r + m - 1) % m) = -1.0;
  }
  Eigen::MatrixXd k = 2.0 * lambda2 * a.transpose() * a;
  for (Eigen::Index r = 0; r < m; ++r) k(r, r) += mask(i, j, r) + 3.0 * rho;
  return k;
}

struct DefaultCase {
  World world;
  ObservationSet obs;
};

const DefaultCase& default_case() {
  static const DefaultCase c = [] {
    ExperimentConfig cfg;
    World w = make_world(cfg, 1);
    ObservationSet o = observe(w, 0.1, 0.0, 1);
    return DefaultCase{std::move(w), std::move(o)};
  }();
  return c;
}

}  // namespace

TEST(CyclicDifference, ThreeModeStencil) {
  const auto c = CyclicDifference::build(3);
  Eigen::MatrixXd a(3, 3), l(3, 3);
  a << 1, 0, -1, -1, 1, 0, 0, -1, 1;
  l << 2, -1, -1, -1, 2, -1, -1, -1, 2;
  EXPECT_EQ(c.a, a);
  EXPECT_EQ(c.laplacian, l);
}

TEST(CyclicDifference, AnnihilatesConstantsAndHasOneDimensionalNullSpace) {
  for (int m = 2; m <= 16; ++m) {
    const auto c = CyclicDifference::build(m);
    EXPECT_EQ((c.a * Eigen::VectorXd::Ones(m)).cwiseAbs().maxCoeff(), 0.0);
    for (int r = 0; r < m; ++r) {
      EXPECT_EQ((c.a.row(r).array() == 1.0).count(), 1);
      EXPECT_EQ((c.a.row(r).array() == -1.0).count(), 1);
    }
    EXPECT_EQ(c.laplacian, c.laplacian.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.laplacian);
    EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
    EXPECT_GT(es.eigenvalues()(1), 1e-6);
  }
  EXPECT_THROW(CyclicDifference::build(1), ConfigError);
}

TEST(SolverConfig, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda1 = c.lambda2 = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(c.validate(true));
  c = {};
  c.rho = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = {0.5, 0.5, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = {1.2, -0.1, -0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PrimalUpdate, UnobservedCellAveragesConsensusTerms) {
  const Dims d{3, 3, 4};
  ObservationSet obs = make_observations(d, {{0, 0, 0}}, {2.0});
  SolverConfig cfg;
  cfg.lambda2 = 0.0;
  SolverState s = SolverState::zeros(d, 1.7);
  for (int k = 0; k < 3; ++k) {
    s.m_aux[k] = random_tensor(d, 10 + k);
    s.u_dual[k] = random_tensor(d, 20 + k);
  }
  primal_update(s, obs, DifferentialPrior{Tensor3(d), {}}, cfg);
  for (std::size_t m = 0; m < 4; ++m) {
    double expect = 0.0;
    for (int k = 0; k < 3; ++k) expect += s.m_aux[k](1, 2, m) - s.u_dual[k](1, 2, m);
    EXPECT_NEAR(s.x(1, 2, m), expect / 3.0, 1e-13);
  }
}

TEST(PrimalUpdate, FullyObservedCellTendsToData) {
  const Dims d{2, 2, 5};
  const Tensor3 y = random_tensor(d, 30, 10.0);
  const ObservationSet obs = sample_observations(y, 1.0, 0.0, 1);
  SolverConfig cfg;
  cfg.lambda2 = 0.0;
  SolverState s = SolverState::zeros(d, 1e-10);
  for (int k = 0; k < 3; ++k) s.m_aux[k] = random_tensor(d, 40 + k);
  primal_update(s, obs, DifferentialPrior{Tensor3(d), {}}, cfg);
  // x = (y + rho sum_k M_k) / (1 + 3 rho), so x - y = rho (sum_k M_k - 3 y) / (1 + 3 rho).
  const Tensor3 pull = s.m_aux[0] + s.m_aux[1] + s.m_aux[2] - y * 3.0;
  const double expected = 1e-10 * pull.frobenius_norm() / (1.0 + 3e-10);
  EXPECT_NEAR(frobenius_distance(s.x, y), expected, 1e-3 * expected);
  EXPECT_LE(expected, 1e-7);
}

TEST(PrimalUpdate, SolvesCellSystems) {
  const Dims d{5, 4, 6};
  const ObservationSet obs = random_observations(d, 0.4, 50);
  const DifferentialPrior prior = random_prior(d, 51);
  SolverConfig cfg;
  cfg.lambda2 = 2.5;
  SolverState s = SolverState::zeros(d, 0.8);
  for (int k = 0; k < 3; ++k) {
    s.m_aux[k] = random_tensor(d, 60 + k);
    s.u_dual[k] = random_tensor(d, 70 + k);
  }
  primal_update(s, obs, prior, cfg);
  const auto cyc = CyclicDifference::build(6);
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j) {
      Eigen::VectorXd rhs = obs.y.fiber(i, j).cwiseProduct(obs.mask.fiber(i, j)) +
                            2.0 * cfg.lambda2 * cyc.a.transpose() * prior.d.fiber(i, j);
      for (int k = 0; k < 3; ++k) rhs += s.rho * (s.m_aux[k].fiber(i, j) - s.u_dual[k].fiber(i, j));
      const Eigen::VectorXd res = cell_matrix(obs.mask, i, j, cfg.lambda2, s.rho) * s.x.fiber(i, j) - rhs;
      EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(PrimalSystems, SharesFactorsAcrossMaskPatterns) {
  const Dims d{10, 10, 3};
  const ObservationSet obs = random_observations(d, 0.5, 80);
  PrimalSystems sys(obs.mask, CyclicDifference::build(3), 1.0);
  EXPECT_LE(sys.pattern_count(), 8u);
  EXPECT_GE(sys.pattern_count(), 2u);
}

TEST(AuxiliaryUpdate, ZeroLowRankWeightCopiesConsensus) {
  const Dims d{4, 5, 3};
  SolverConfig cfg;
  cfg.lambda1 = 0.0;
  SolverState s = SolverState::zeros(d, 1.0);
  s.x = random_tensor(d, 90);
  for (int k = 0; k < 3; ++k) s.u_dual[k] = random_tensor(d, 91 + k);
  auxiliary_update(s, cfg);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(s.m_aux[k] == s.x + s.u_dual[k]);
}

TEST(AuxiliaryUpdate, LargeThresholdZeroesAuxiliaries) {
  const Dims d{4, 5, 3};
  SolverConfig cfg;
  SolverState s = SolverState::zeros(d, 1.0);
  s.x = random_tensor(d, 95);
  double smax = 0.0;
  for (int k = 1; k <= 3; ++k) smax = std::max(smax, singular_values(unfold(s.x, k).matrix)(0));
  cfg.lambda1 = 3.0 * smax * 1.01;  // tau_k = lambda1 / 3 > sigma_max
  auxiliary_update(s, cfg);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(s.m_aux[k].frobenius_norm(), 0.0);
}

TEST(AuxiliaryUpdate, ImprovesProximalSubproblem) {
  const Dims d{6, 5, 4};
  SolverConfig cfg;
  cfg.lambda1 = 2.0;
  SolverState s = SolverState::zeros(d, 0.7);
  s.x = random_tensor(d, 96);
  for (int k = 0; k < 3; ++k) s.u_dual[k] = random_tensor(d, 97 + k, 0.3);
  auxiliary_update(s, cfg);
  for (int k = 0; k < 3; ++k) {
    const double tau = cfg.lambda1 * cfg.alpha[k] / s.rho;
    const Tensor3 z = s.x + s.u_dual[k];
    auto sub = [&](const Tensor3& m) {
      return 0.5 * frobenius_distance(m, z) * frobenius_distance(m, z) + tau * nuclear_norm(unfold(m, k + 1).matrix);
    };
    EXPECT_LE(sub(s.m_aux[k]), sub(z));
  }
}

TEST(DualUpdate, AccumulatesResiduals) {
  const Dims d{3, 3, 3};
  SolverState s = SolverState::zeros(d, 1.0);
  s.x = random_tensor(d, 100);
  for (int k = 0; k < 3; ++k) s.m_aux[k] = s.x;
  dual_update(s);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(s.u_dual[k].frobenius_norm(), 0.0);
  for (int k = 0; k < 3; ++k) s.m_aux[k] = random_tensor(d, 101 + k);
  dual_update(s);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(s.u_dual[k] == s.x - s.m_aux[k]);
  dual_update(s);
  for (int k = 0; k < 3; ++k) EXPECT_LE(frobenius_distance(s.u_dual[k], (s.x - s.m_aux[k]) * 2.0), 1e-14);
}

TEST(CheckConvergence, FixedPointConverges) {
  const Dims d{3, 3, 3};
  SolverConfig cfg;
  SolverState s = SolverState::zeros(d, 1.0);
  s.x = random_tensor(d, 110);
  for (int k = 0; k < 3; ++k) s.m_aux[k] = s.m_prev[k] = s.x;
  s.iteration = 1;
  EXPECT_EQ(check_convergence(s, cfg), Decision::kConverged);
  EXPECT_EQ(s.history.back().primal_residual, 0.0);
  EXPECT_EQ(s.history.back().dual_residual, 0.0);
}

TEST(CheckConvergence, FirstIterationContinuesAndBudgetStops) {
  const auto& pc = default_case();
  SolverConfig cfg;
  const auto cyc = CyclicDifference::build(12);
  PrimalSystems sys(pc.obs.mask, cyc, cfg.lambda2);
  const Tensor3 rhs = static_rhs(pc.obs, pc.world.prior, cyc, cfg.lambda2);
  SolverState s = SolverState::zeros(pc.obs.dims(), cfg.rho);
  s.iteration = 1;
  primal_update(s, rhs, sys, 1);
  auxiliary_update(s, cfg);
  dual_update(s);
  EXPECT_EQ(check_convergence(s, cfg), Decision::kContinue);
  ASSERT_EQ(s.history.size(), 1u);

  cfg.max_iters = 3;
  const SolveResult r = solve(pc.obs, pc.world.prior, cfg);
  EXPECT_EQ(r.report.decision, Decision::kMaxIters);
  EXPECT_EQ(r.report.iterations, 3);
  EXPECT_NE(r.report.diagnostics.find("max_iters"), std::string::npos);
  EXPECT_TRUE(r.x.all_finite());
}

TEST(Solve, FullSamplingNearInterpolation) {
  const auto& pc = default_case();
  const ObservationSet full = sample_observations(pc.world.truth, 1.0, 0.0, 1);
  SolverConfig cfg;
  cfg.lambda1 = cfg.lambda2 = 0.001;
  const SolveResult r = solve(full, pc.world.prior, cfg);
  EXPECT_EQ(r.report.decision, Decision::kConverged);
  EXPECT_LE(rmse_db(r.x, pc.world.truth), 0.1);
}

TEST(Solve, DefaultConfigConvergesAndBeatsData) {
  const auto& pc = default_case();
  const SolveResult r = solve(pc.obs, pc.world.prior, SolverConfig{});
  EXPECT_EQ(r.report.decision, Decision::kConverged);
  EXPECT_LE(r.report.iterations, 500);
  const auto& last = r.report.history.back();
  EXPECT_LE(last.primal_scaled, 1e-3);
  EXPECT_LE(last.dual_scaled, 1e-3);
  EXPECT_TRUE(std::isfinite(r.report.final_objective));
  EXPECT_LT(rmse_db(r.x, pc.world.truth), 3.0);
}

TEST(Solve, DimensionMismatchThrows) {
  const ObservationSet obs = random_observations({3, 3, 4}, 0.5, 120);
  EXPECT_THROW(solve(obs, random_prior({3, 3, 5}, 1), SolverConfig{}), DimensionError);
}

TEST(Solve, ThreadCountDoesNotChangeSolution) {
  const auto& pc = default_case();
  SolverConfig one, four;
  four.threads = 4;
  const SolveResult a = solve(pc.obs, pc.world.prior, one);
  const SolveResult b = solve(pc.obs, pc.world.prior, four);
  EXPECT_EQ(a.report.iterations, b.report.iterations);
  EXPECT_LE(frobenius_distance(a.x, b.x), 1e-9 * a.x.frobenius_norm());
}

TEST(Solve, AugmentedLagrangianNonIncreasingWithFixedPenalty) {
  // With a fixed penalty the augmented Lagrangian decreases monotonically
  // along the first iterations; adaptive penalties rescale it and are excluded.
  const auto& pc = default_case();
  SolverConfig cfg;
  cfg.adaptive_penalty = false;
  const auto cyc = CyclicDifference::build(12);
  PrimalSystems sys(pc.obs.mask, cyc, cfg.lambda2);
  const Tensor3 rhs = static_rhs(pc.obs, pc.world.prior, cyc, cfg.lambda2);
  SolverState s = SolverState::zeros(pc.obs.dims(), cfg.rho);
  double prev = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= 50; ++t) {
    s.iteration = t;
    primal_update(s, rhs, sys, 1);
    auxiliary_update(s, cfg);
    dual_update(s);
    const double al = augmented_lagrangian(s, pc.obs, pc.world.prior, cfg, cyc);
    EXPECT_LE(al, prev + 1e-8 * std::abs(prev)) << "iteration " << t;
    prev = al;
  }
}

TEST(Solve, PhysicsTermFillsUnobservedBlock) {
  const auto& pc = default_case();
  std::vector<Index3> omega;
  std::vector<double> values;
  for (const auto& ix : pc.obs.omega) {
    if (ix.i >= 5 && ix.i < 15 && ix.j >= 5 && ix.j < 15) continue;
    omega.push_back(ix);
    values.push_back(pc.obs.y(ix.i, ix.j, ix.m));
  }
  const ObservationSet held_out = make_observations(pc.obs.dims(), omega, values);
  const SolveResult r = solve(held_out, pc.world.prior, SolverConfig{});
  const auto cyc = CyclicDifference::build(12);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, n = 0;
  for (std::size_t i = 5; i < 15; ++i)
    for (std::size_t j = 5; j < 15; ++j) {
      const Eigen::VectorXd diff = cyc.a * r.x.fiber(i, j);
      const auto prior = pc.world.prior.d.fiber(i, j);
      for (Eigen::Index m = 0; m < 12; ++m) {
        sa += diff(m);
        sb += prior(m);
        saa += diff(m) * diff(m);
        sbb += prior(m) * prior(m);
        sab += diff(m) * prior(m);
        n += 1;
      }
    }
  const double cov = sab / n - sa / n * sb / n;
  const double pearson = cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
  EXPECT_GE(pearson, 0.9);
}

TEST(Solve, ObjectiveTrackingMatchesFinalObjective) {
  const Dims d{6, 6, 4};
  const ObservationSet obs = random_observations(d, 0.5, 130);
  const DifferentialPrior prior = random_prior(d, 131);
  SolverConfig cfg;
  cfg.track_objective = true;
  const SolveResult r = solve(obs, prior, cfg);
  for (const auto& h : r.report.history) EXPECT_TRUE(std::isfinite(h.objective));
  const auto cyc = CyclicDifference::build(4);
  EXPECT_NEAR(r.report.final_objective, objective(r.x, obs, prior, cfg, cyc), 1e-12);
}
