#include <gtest/gtest.h>

#include <cmath>

#include "bmpc/bilevel.hpp"

namespace bmpc {
namespace {

SrbState standing() {
  SrbState x;
  x.r = Vec3(0.0, 0.0, 0.3);
  return x;
}

ContactSchedule one_leg(std::vector<double> times) {
  ScheduleConfig cfg;
  cfg.C = static_cast<int>(times.size());
  LegSchedule L;
  L.phase0 = ContactPhase::InContact;
  L.times = std::move(times);
  return ContactSchedule(cfg, 0.0, {L});
}

// walking snapshot with every free contact time moved off the node grid
struct Snapshot {
  MpcConfig cfg;
  SrbParams model;
  ContactSchedule sched;
  MpcIterate prev, base;
  SrbState x;
};

Snapshot walking_snapshot() {
  Snapshot s{{}, {}, ContactSchedule::make(GaitPattern::Trot, {}, 0.0), {}, {}, standing()};
  for (int k = 0; k < 7; ++k) {
    s.prev = rt_iteration(s.cfg, s.model, s.sched, s.prev, s.x);
    s.x = integrate(s.x, [&](double t) { return s.prev.input_at(t); }, s.sched.t_now(), s.cfg.dt,
                    s.model);
    s.sched = s.sched.advance_time(s.sched.t_now() + s.cfg.dt);
  }
  Vec th = s.sched.free_values();
  th.array() += 0.013;
  s.sched = s.sched.with_free_values(th);
  s.base = rt_iteration(s.cfg, s.model, s.sched, s.prev, s.x);
  return s;
}

TEST(Gradient, ZeroJacobiansGiveZero) {
  Snapshot s = walking_snapshot();
  const ParamJacobians jac = ParamJacobians::zeros(s.base.qp, s.sched.num_free());
  const Vec g = assemble_gradient(s.base, jac, s.sched, BilevelConfig{});
  EXPECT_EQ(g.size(), s.sched.num_free());
  EXPECT_EQ(g.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Gradient, BothRoutesAgreeAndMatchFiniteDifferences) {
  Snapshot s = walking_snapshot();
  const ParamJacobians jac = param_jacobians(s.cfg, s.model, s.sched, s.base);
  SensitivityOptions opt;
  opt.degenerate_mode = DegenerateMode::Perturb;
  const auto both = differentiate_cost_both(s.base.qp, s.base.sol, jac, opt);
  EXPECT_LE((both.forward - both.adjoint).lpNorm<Eigen::Infinity>(),
            1e-10 * std::max(1.0, both.adjoint.lpNorm<Eigen::Infinity>()));

  const Vec g = assemble_gradient(s.base, jac, s.sched, BilevelConfig{});
  const Vec th = s.sched.free_values();
  for (int j : s.sched.free_in_horizon(s.sched.t_now() + s.cfg.horizon())) {
    const double h = 1e-6;
    Vec tp = th, tm = th;
    tp[j] += h;
    tm[j] -= h;
    const double Jp = solve_qp(build_qp(s.cfg, s.model, s.sched.with_free_values(tp), s.base.inputs)).J;
    const double Jm = solve_qp(build_qp(s.cfg, s.model, s.sched.with_free_values(tm), s.base.inputs)).J;
    const double fd = (Jp - Jm) / (2 * h);
    EXPECT_NEAR(g[j], fd, 1e-4 * std::max(1.0, std::abs(fd))) << j;
  }
}

TEST(Gradient, BarrierSingleRow) {
  Polytope p;
  p.A_ineq = Mat::Constant(1, 1, -1.0);  // g = theta - t_now
  p.b_ineq = Vec::Constant(1, -0.5);
  const Vec g = barrier_gradient(p, Vec::Constant(1, 1.5));
  EXPECT_DOUBLE_EQ(g[0], -1.0);
  EXPECT_DOUBLE_EQ(barrier_value(p, Vec::Constant(1, 1.5)), 0.0);
  try {
    barrier_gradient(p, Vec::Constant(1, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BarrierDomain);
  }
  // the MPC path adds the same weighted barrier term
  Snapshot s = walking_snapshot();
  BilevelConfig with, without;
  with.barrier_enabled = true;
  with.barrier_weight = 1e-3;
  const ParamJacobians jac = param_jacobians(s.cfg, s.model, s.sched, s.base);
  const Vec diff = assemble_gradient(s.base, jac, s.sched, with) -
                   assemble_gradient(s.base, jac, s.sched, without);
  const Vec expect = 1e-3 * barrier_gradient(s.sched.polytope_rows(), s.sched.free_values());
  EXPECT_LE((diff - expect).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(StepDirection, ZeroGradientGivesZeroStep) {
  const auto s = one_leg({0.3, 0.6});
  const Vec p = step_direction(Vec::Zero(2), s, BilevelConfig{});
  EXPECT_LE(p.lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(StepDirection, InteriorHitsTrustBox) {
  const auto s = one_leg({0.5});
  BilevelConfig cfg;
  const Vec p = step_direction(Vec::Constant(1, 1.0), s, cfg);
  EXPECT_NEAR(p[0], -cfg.trust_radius, 1e-9);
}

TEST(StepDirection, BoundaryRowStaysTight) {
  // gap theta2 - theta1 sits at k_min; the gradient pushes it smaller
  const auto s = one_leg({0.3, 0.4});
  BilevelConfig cfg;
  Vec grad(2);
  grad << -1.0, 0.5;
  const Vec p = step_direction(grad, s, cfg);
  // vertex enumeration over box + halfplane p1 - p2 <= 0
  const double D = cfg.trust_radius;
  std::vector<std::array<double, 3>> lines = {
      {1, 0, D}, {-1, 0, D}, {0, 1, D}, {0, -1, D}, {1, -1, 0}};  // a p <= b
  double best = 1e300;
  Vec arg(2);
  for (std::size_t i = 0; i < lines.size(); ++i)
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      Eigen::Matrix2d M;
      M << lines[i][0], lines[i][1], lines[j][0], lines[j][1];
      if (std::abs(M.determinant()) < 1e-12) continue;
      const Eigen::Vector2d v = M.inverse() * Eigen::Vector2d(lines[i][2], lines[j][2]);
      bool ok = true;
      for (const auto& l : lines) ok &= l[0] * v[0] + l[1] * v[1] <= l[2] + 1e-12;
      if (ok && grad.dot(v) < best) {
        best = grad.dot(v);
        arg = v;
      }
    }
  EXPECT_NEAR(grad.dot(p), best, 1e-9);
  EXPECT_NEAR(p[0] - p[1], 0.0, 1e-9);
  EXPECT_LE((p - arg).norm(), 1e-8);
}

TEST(LineSearch, ZeroDirectionIsRejected) {
  BilevelConfig cfg;
  int calls = 0;
  const auto step = line_search([&](const Vec&, int) { ++calls; return 0.0; }, Vec::Zero(1),
                                Vec::Zero(1), Vec::Zero(1), cfg, 1.0);
  EXPECT_FALSE(step.accepted);
  EXPECT_EQ(calls, 0);
}

TEST(LineSearch, PicksGridMinimumOfQuadratic) {
  BilevelConfig cfg;
  const double star = 0.37;
  auto J = [&](const Vec& th, int) { return (th[0] - star) * (th[0] - star); };
  const auto step = line_search(J, Vec::Zero(1), Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), cfg);
  double best = 1e300, a_best = 0.0;
  for (double a : cfg.alphas)
    if ((a - star) * (a - star) < best) best = (a - star) * (a - star), a_best = a;
  EXPECT_DOUBLE_EQ(step.alpha_star, a_best);
  EXPECT_TRUE(step.accepted);
  EXPECT_DOUBLE_EQ(step.baseline, star * star);
}

TEST(LineSearch, AllWorseIsRejected) {
  BilevelConfig cfg;
  auto J = [&](const Vec& th, int) { return th[0] * th[0]; };
  const auto step = line_search(J, Vec::Zero(1), Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), cfg);
  EXPECT_FALSE(step.accepted);
}

TEST(LineSearch, FailedEvaluationsAreSkipped) {
  BilevelConfig cfg;
  cfg.threads = 4;
  auto J = [&](const Vec& th, int slot) {
    if (slot % 2 == 0) throw Error(ErrorCode::SolverFailure, "x");
    return (th[0] - 0.5) * (th[0] - 0.5);
  };
  const auto step = line_search(J, Vec::Zero(1), Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), cfg);
  EXPECT_TRUE(std::isnan(step.costs[0]));
  EXPECT_DOUBLE_EQ(step.alpha_star, 0.4);  // 0.5 itself failed, 0.4 and 0.6 tie
}

TEST(Toy, SensitivityMatchesClosedForm) {
  ToyProblem toy;
  for (double th : {0.2, 0.35, 0.5, 0.63, 0.8, 0.9}) {
    const QpProblem qp = toy.qp(th);
    const QpSolution sol = solve_qp(qp);
    ASSERT_EQ(sol.status, QpStatus::Optimal);
    EXPECT_NEAR(sol.J, toy.true_cost(th), 1e-9);
    const Vec g = differentiate_cost(qp, sol, toy.jacobians(th)).dJ_dtheta;
    EXPECT_NEAR(g[0], toy.true_gradient(th), 1e-8);
  }
}

TEST(Toy, ConvergesWithStrictDecrease) {
  ToyProblem toy;
  BilevelConfig cfg;
  const auto trace = run_toy_bilevel(toy, cfg, 0.15, 200);
  int first_small = -1;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const auto& c = trace[k];
    EXPECT_TRUE(c.in_polytope);
    if (std::abs(c.true_grad) > 1e-9) EXPECT_GT(c.grad * c.true_grad, 0.0) << k;
    if (c.step.accepted) EXPECT_LT(c.step.costs[c.step.best_index], c.step.baseline);
    if (first_small < 0 && std::abs(c.grad) < 1e-3) first_small = static_cast<int>(k);
  }
  ASSERT_GE(first_small, 0);
  EXPECT_LT(first_small, 200);
}

TEST(Toy, BarrierKeepsStrictInterior) {
  ToyProblem toy;
  toy.theta_max = 0.5;  // unconstrained optimum lies outside, iterates press on the bound
  BilevelConfig cfg;
  cfg.barrier_enabled = true;
  const auto trace = run_toy_bilevel(toy, cfg, 0.2, 100);
  for (const auto& c : trace) EXPECT_GT(c.min_gap, 0.0);
  EXPECT_GT(trace.back().theta, 0.45);
}

TEST(Controller, LargePeriodEqualsPlainMpc) {
  MpcConfig mpc;
  SrbParams model;
  BilevelConfig cfg;
  cfg.k_hl = 1000;
  const auto sched = ContactSchedule::make(GaitPattern::Trot, {}, 0.0);
  BilevelController on(mpc, model, cfg, sched, true), off(mpc, model, cfg, sched, false);
  SrbState x = standing();
  for (int k = 0; k < 8; ++k) {
    const double t = k * mpc.dt;
    const auto a = on.cycle(t, x);
    off.cycle(t, x);
    EXPECT_FALSE(a.high_level);
    x = integrate(x, [&](double s) { return off.plan().input_at(s); }, t, mpc.dt, model);
  }
  EXPECT_EQ(on.plan().sol.z, off.plan().sol.z);
}

TEST(Controller, StandHasNothingToMove) {
  MpcConfig mpc;
  SrbParams model;
  BilevelConfig cfg;
  cfg.k_start = 1;
  BilevelController c(mpc, model, cfg, ContactSchedule::make(GaitPattern::Stand, {}, 0.0), true);
  for (int k = 0; k < 4; ++k) {
    const auto info = c.cycle(k * mpc.dt, standing());
    EXPECT_FALSE(info.step.has_value());
  }
  EXPECT_EQ(c.schedule().num_free(), 0);
}

TEST(Controller, ThreadCountDoesNotChangeResult) {
  MpcConfig mpc;
  SrbParams model;
  auto run = [&](int threads) {
    BilevelConfig cfg;
    cfg.k_start = 2;
    cfg.threads = threads;
    BilevelController c(mpc, model, cfg, ContactSchedule::make(GaitPattern::Trot, {}, 0.0), true);
    SrbState x = standing();
    x.l = Vec3(2.0, 0.0, 0.0);
    int accepted = 0;
    for (int k = 0; k < 6; ++k) {
      const double t = k * mpc.dt;
      const auto info = c.cycle(t, x);
      accepted += info.step && info.step->accepted;
      x = integrate(x, [&](double s) { return c.plan().input_at(s); }, t, mpc.dt, model);
    }
    return std::make_pair(c.schedule().free_values(), accepted);
  };
  const auto a = run(1), b = run(4);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  std::printf("accepted steps: %d\n", a.second);
}

}  // namespace
}  // namespace bmpc
