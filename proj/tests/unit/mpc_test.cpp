#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "bmpc/mpc.hpp"

namespace bmpc {
namespace {

SrbState standing(double z = 0.3) {
  SrbState x;
  x.r = Vec3(0.0, 0.0, z);
  return x;
}

double max_abs_diff(const SpMat& a, const SpMat& b) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  return Mat(a - b).cwiseAbs().maxCoeff();
}

double max_abs(const SpMat& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  return Mat(a).cwiseAbs().maxCoeff();
}

TEST(Mpc, HoverConvergesAndHoldsWeight) {
  MpcConfig cfg;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Stand, {}, 0.0);
  MpcIterate it;
  std::vector<double> J;
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < 5; ++k) {
    it = rt_iteration(cfg, model, sched, it, standing());
    ASSERT_TRUE(it.valid);
    ASSERT_FALSE(it.stale);
    J.push_back(it.J_A);
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 5;
  std::printf("hover rt_iteration %.1f ms, %d vars\n", ms, static_cast<int>(it.qp.num_vars()));
  EXPECT_LT(std::abs(J[4] - J[3]), 1e-6);
  Vec3 total = Vec3::Zero();
  for (int leg = 0; leg < kLegs; ++leg) total += it.u[5].F[leg];
  // the small force penalty lets the support sag a little toward the horizon end
  EXPECT_NEAR(total.z(), model.m * 9.81, 0.01 * model.m * 9.81);
  for (const auto& x : it.x) EXPECT_NEAR(x.r.z(), 0.3, 1e-3);
  EXPECT_LE(force_constraint_violation(model, it), 1e-7);
  EXPECT_LE(equality_residual(it), 1e-8);
}

TEST(Mpc, TwoNodeStateRows) {
  MpcConfig cfg;
  cfg.N = 2;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Stand, {}, 0.0);
  const BuildInputs in = make_build_inputs(cfg, model, sched, MpcIterate{}, standing());
  const QpProblem qp = build_qp(cfg, model, sched, in);
  // rows touching the state block: initial condition plus one dynamics step
  int rows = 0;
  const Mat A(qp.A);
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    if (A.row(r).head(2 * kStateDim).cwiseAbs().maxCoeff() > 0.0) ++rows;
  EXPECT_EQ(rows, 24);
}

TEST(Mpc, NoForceRowsWhileSwinging) {
  MpcConfig cfg;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Trot, {}, 0.0).advance_time(0.35);
  const BuildInputs in = make_build_inputs(cfg, model, sched, MpcIterate{}, standing());
  const QpProblem qp = build_qp(cfg, model, sched, in);
  int force_nodes = 0;
  for (int i = 0; i < cfg.N; ++i) {
    const double t = sched.t_now() + i * cfg.dt;
    for (int leg = 0; leg < kLegs; ++leg) {
      if (sched.phase_at(leg, t) != ContactPhase::InContact) continue;
      bool at_change = false;
      for (double c : sched.leg(leg).times) at_change |= std::abs(c - t) < 1e-9;
      force_nodes += !at_change;
    }
  }
  EXPECT_EQ(qp.num_ineq(), 6 * force_nodes + 6 * kLegs * (cfg.N - 1));
}

TEST(Mpc, TrotPlanIsFeasible) {
  MpcConfig cfg;
  SrbParams model;
  auto sched = ContactSchedule::make(GaitPattern::Trot, {}, 0.0);
  MpcIterate it;
  SrbState x = standing();
  for (int k = 0; k < 12; ++k) {
    it = rt_iteration(cfg, model, sched, it, x);
    ASSERT_FALSE(it.stale) << k;
    EXPECT_LE(force_constraint_violation(model, it), 1e-7);
    EXPECT_LE(equality_residual(it), 1e-8);
    x = integrate(x, [&](double t) { return it.input_at(t); }, sched.t_now(), cfg.dt, model);
    sched = sched.advance_time(sched.t_now() + cfg.dt);
  }
  EXPECT_NEAR(x.r.z(), 0.3, 0.05);
}

TEST(Mpc, FreeForceSlopesAtContactChanges) {
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Trot, {}, 0.0);
  MpcConfig pinned, free = pinned;
  free.force_slopes_free = true;
  MpcIterate a, b;
  for (int k = 0; k < 3; ++k) {
    a = rt_iteration(pinned, model, sched, a, standing());
    b = rt_iteration(free, model, sched, b, standing());
  }
  ASSERT_FALSE(a.stale);
  ASSERT_FALSE(b.stale);
  EXPECT_EQ(a.qp.num_vars(), b.qp.num_vars());
  EXPECT_LT(b.qp.num_eq(), a.qp.num_eq());
  EXPECT_LE(equality_residual(b), 1e-8);
  // the force still vanishes at every change inside the horizon
  for (int leg = 0; leg < kLegs; ++leg)
    for (double t : sched.leg(leg).times) {
      if (t >= b.t0 + free.horizon()) break;
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(a.legs[leg].force[c].eval(t).first, 0.0, 1e-9);
        EXPECT_NEAR(b.legs[leg].force[c].eval(t).first, 0.0, 1e-9);
        EXPECT_NEAR(a.legs[leg].force[c].eval(t).second, 0.0, 1e-9);
      }
    }
}

TEST(Mpc, RepeatedSolvesDoNotIncreaseCost) {
  MpcConfig cfg;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Trot, {}, 0.0);
  SrbState x0 = standing(0.28);
  x0.l = Vec3(0.3, -0.2, 0.0);
  MpcIterate it;
  it = rt_iteration(cfg, model, sched, it, x0);
  double prev = it.J_A;
  for (int k = 0; k < 6; ++k) {
    it = rt_iteration(cfg, model, sched, it, x0);
    EXPECT_LE(it.J_A, prev + 1e-6 * std::max(1.0, std::abs(prev)));
    prev = it.J_A;
  }
}

TEST(Mpc, EvalCostAtHoverIsStable) {
  MpcConfig cfg;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Stand, {}, 0.0);
  MpcIterate warm = rt_iteration(cfg, model, sched, MpcIterate{}, standing());
  warm = rt_iteration(cfg, model, sched, warm, standing());
  const double j1 = eval_cost(cfg, model, sched, standing(), warm, 1);
  const double j5 = eval_cost(cfg, model, sched, standing(), warm, 5);
  EXPECT_NEAR(j1, j5, 1e-6);
  EXPECT_THROW(eval_cost(cfg, model, sched, standing(), warm, 0), Error);
}

TEST(Mpc, ParamJacobiansMatchFiniteDifferences) {
  MpcConfig cfg;
  SrbParams model;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> shift(-0.04, 0.04);
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; checked < 50; ++trial) {
    ASSERT_LT(trial, 500);
    auto sched = ContactSchedule::make(trial % 2 ? GaitPattern::Pace : GaitPattern::Trot, {}, 0.0)
                     .advance_time(0.05 * (trial % 13));
    Vec th = sched.free_values();
    for (int k = 0; k < th.size(); ++k) th[k] += shift(rng);
    sched = sched.with_free_values(th);
    if (sched.polytope_margin() < 1e-3 || sched.free_in_horizon(sched.t_now() + cfg.horizon()).empty())
      continue;
    // keep every change away from the node grid
    bool near_node = false;
    for (int leg = 0; leg < kLegs; ++leg)
      for (double c : sched.leg(leg).times) {
        const double s = (c - sched.t_now()) / cfg.dt;
        near_node |= std::abs(s - std::round(s)) < 0.02;
      }
    if (near_node) continue;

    MpcIterate it;
    it.inputs = make_build_inputs(cfg, model, sched, MpcIterate{}, standing());
    std::string structure;
    it.qp = build_qp(cfg, model, sched, it.inputs, nullptr, &structure);
    it.t0 = sched.t_now();
    const ParamJacobians jac = param_jacobians(cfg, model, sched, it);
    const double h = 1e-6;
    for (int k : sched.free_in_horizon(sched.t_now() + cfg.horizon())) {
      Vec tp = th, tm = th;
      tp[k] += h;
      tm[k] -= h;
      std::string sp, sm;
      const QpProblem P = build_qp(cfg, model, sched.with_free_values(tp), it.inputs, nullptr, &sp);
      const QpProblem M = build_qp(cfg, model, sched.with_free_values(tm), it.inputs, nullptr, &sm);
      ASSERT_EQ(sp, structure);
      ASSERT_EQ(sm, structure);
      auto rel = [&](const SpMat& p, const SpMat& m, const SpMat& d) {
        const SpMat fd = (p - m) / (2 * h);
        return max_abs_diff(fd, d) / std::max(max_abs(d), 1e-3);
      };
      worst = std::max({worst, rel(P.A, M.A, jac.dA[k]), rel(P.G, M.G, jac.dG[k]),
                        rel(P.Q, M.Q, jac.dQ[k])});
      const Vec fdq = (P.q - M.q) / (2 * h);
      worst = std::max(worst, (fdq - jac.dq[k]).lpNorm<Eigen::Infinity>() /
                                  std::max(jac.dq[k].lpNorm<Eigen::Infinity>(), 1e-3));
    }
    ++checked;
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Mpc, FailedSolveWithoutPlanThrows) {
  MpcConfig cfg;
  SrbParams model;
  const auto sched = ContactSchedule::make(GaitPattern::Stand, {}, 0.0);
  try {
    rt_iteration(cfg, model, sched, MpcIterate{}, standing(1.0));  // feet cannot reach
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SolverFailure);
  }
}

}  // namespace
}  // namespace bmpc
