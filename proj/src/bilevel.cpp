#include "bmpc/bilevel.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace bmpc {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int worker_count(const BilevelConfig& cfg, int tasks) {
  int n = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(tasks, 1));
}

}  // namespace

void BilevelConfig::validate() const {
  if (k_hl < 1) throw Error(ErrorCode::ScenarioInvalid, "k_hl must be >= 1");
  if (k_start < 1) throw Error(ErrorCode::ScenarioInvalid, "k_start must be > 0");
  if (!(trust_radius > 0.0)) throw Error(ErrorCode::ScenarioInvalid, "trust radius must be > 0");
  if (!(trust_shrink > 0.0 && trust_shrink <= 1.0))
    throw Error(ErrorCode::ScenarioInvalid, "trust_shrink outside (0, 1]");
  if (!(trust_min > 0.0 && trust_min <= trust_radius))
    throw Error(ErrorCode::ScenarioInvalid, "trust_min outside (0, trust_radius]");
  if (alphas.empty()) throw Error(ErrorCode::ScenarioInvalid, "empty alpha grid");
  for (double a : alphas)
    if (!(a > 0.0 && a <= 1.0)) throw Error(ErrorCode::ScenarioInvalid, "alpha outside (0, 1]");
  if (n_solves_eval < 1) throw Error(ErrorCode::ScenarioInvalid, "n_solves_eval must be >= 1");
  if (!(0.0 < c1 && c1 < c2 && c2 < 1.0))
    throw Error(ErrorCode::ScenarioInvalid, "Wolfe constants need 0 < c1 < c2 < 1");
  if (barrier_weight < 0.0) throw Error(ErrorCode::ScenarioInvalid, "negative barrier weight");
  if (threads < 0) throw Error(ErrorCode::ScenarioInvalid, "negative thread count");
}

Vec polytope_gap(const Polytope& poly, const Vec& theta) {
  return poly.b_ineq - poly.A_ineq * theta;
}

Vec barrier_gradient(const Polytope& poly, const Vec& theta) {
  const Vec g = polytope_gap(poly, theta);
  Vec out = Vec::Zero(theta.size());
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (!(g[j] > 0.0)) throw Error(ErrorCode::BarrierDomain, "theta on or outside the polytope");
    out += poly.A_ineq.row(j).transpose() / g[j];
  }
  return out;
}

double barrier_value(const Polytope& poly, const Vec& theta) {
  const Vec g = polytope_gap(poly, theta);
  double b = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (!(g[j] > 0.0)) throw Error(ErrorCode::BarrierDomain, "theta on or outside the polytope");
    b -= std::log(g[j]);
  }
  return b;
}

Vec assemble_gradient(const MpcIterate& iterate, const ParamJacobians& jac,
                      const ContactSchedule& sched, const BilevelConfig& cfg,
                      std::vector<int>* degenerate) {
  if (jac.num_params != sched.num_free())
    throw Error(ErrorCode::DimensionMismatch, "jacobian count differs from free schedule entries");
  SensitivityOptions opt;
  opt.degenerate_mode = cfg.degenerate_mode;
  const SensitivityResult r = differentiate_cost(iterate.qp, iterate.sol, jac, opt);
  if (degenerate) *degenerate = r.degenerate_indices;
  Vec grad = r.dJ_dtheta;
  if (cfg.barrier_enabled)
    grad += cfg.barrier_weight * barrier_gradient(sched.polytope_rows(), sched.free_values());
  return grad;
}

Vec step_direction(const Vec& grad, const Polytope& poly, const Vec& theta, double radius) {
  if (!grad.allFinite()) throw Error(ErrorCode::DimensionMismatch, "non-finite gradient");
  const Eigen::Index n = theta.size(), m = poly.A_ineq.rows();
  if (grad.size() != n) throw Error(ErrorCode::DimensionMismatch, "gradient size");
  if (n == 0) return Vec();
  Polytope lp;
  lp.A_ineq.resize(m + 2 * n, n);
  lp.A_ineq << poly.A_ineq, Mat::Identity(n, n), -Mat::Identity(n, n);
  lp.b_ineq.resize(m + 2 * n);
  // tiny negative slack from round-off would make p = 0 infeasible
  lp.b_ineq << (poly.b_ineq - poly.A_ineq * theta).cwiseMax(0.0), Vec::Constant(2 * n, radius);
  lp.A_eq.resize(0, n);
  lp.b_eq.resize(0);
  Vec p = solve_lp(grad, lp);
  for (Eigen::Index k = 0; k < n; ++k)
    if (std::abs(p[k]) < 1e-12) p[k] = 0.0;
  return p;
}

Vec step_direction(const Vec& grad, const ContactSchedule& sched, const BilevelConfig& cfg) {
  return step_direction(grad, sched.polytope_rows(), sched.free_values(), cfg.trust_radius);
}

HighLevelStep line_search(const CostEvaluator& eval, const Vec& theta, const Vec& grad,
                          const Vec& p, const BilevelConfig& cfg, std::optional<double> baseline) {
  HighLevelStep step;
  step.grad = grad;
  step.p = p;
  const int n = static_cast<int>(cfg.alphas.size());
  step.costs.assign(n, std::numeric_limits<double>::quiet_NaN());
  if (p.size() == 0 || p.lpNorm<Eigen::Infinity>() == 0.0) {
    step.baseline = baseline.value_or(std::numeric_limits<double>::quiet_NaN());
    return step;
  }
  step.baseline = baseline ? *baseline : eval(theta, -1);

  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        const double c = eval(theta + cfg.alphas[i] * p, i);
        if (std::isfinite(c)) step.costs[i] = c;
      } catch (const Error&) {
      }
    }
  };
  const int workers = worker_count(cfg, n);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  // argmin, smallest alpha on ties
  for (int i = 0; i < n; ++i) {
    if (std::isnan(step.costs[i])) continue;
    const bool better = step.best_index < 0 || step.costs[i] < step.costs[step.best_index] ||
                        (step.costs[i] == step.costs[step.best_index] &&
                         cfg.alphas[i] < cfg.alphas[step.best_index]);
    if (better) step.best_index = i;
  }
  if (step.best_index < 0) return step;
  const double best = step.costs[step.best_index];
  step.alpha_star = cfg.alphas[step.best_index];
  step.accepted = best < step.baseline - 1e-12;
  step.wolfe_armijo_ok = best <= step.baseline + cfg.c1 * step.alpha_star * grad.dot(p);
  return step;
}

HighLevelStep high_level_step(HighLevelProblem& problem, const BilevelConfig& cfg,
                              double& radius) {
  const Vec theta = problem.theta();
  const Polytope poly = problem.polytope();
  Vec grad = problem.cost_gradient();
  double baseline = problem.baseline_cost();
  if (cfg.barrier_enabled) {
    grad += cfg.barrier_weight * barrier_gradient(poly, theta);
    baseline += cfg.barrier_weight * barrier_value(poly, theta);
  }
  const Vec p = step_direction(grad, poly, theta, radius);
  problem.prepare_slots(static_cast<int>(cfg.alphas.size()));
  CostEvaluator eval = [&](const Vec& th, int slot) {
    double c = problem.evaluate(th, slot);
    if (cfg.barrier_enabled) c += cfg.barrier_weight * barrier_value(poly, th);
    return c;
  };
  HighLevelStep step = line_search(eval, theta, grad, p, cfg, baseline);
  step.trust_radius = radius;
  if (step.accepted) {
    problem.accept(theta + step.alpha_star * p, step.best_index);
    radius = std::min(cfg.trust_radius, radius / cfg.trust_shrink);
  } else if (p.size() > 0 && p.lpNorm<Eigen::Infinity>() > 0.0) {
    radius = std::max(cfg.trust_min, radius * cfg.trust_shrink);
  }
  return step;
}

// ---- MPC as a high-level problem -----------------------------------------

std::optional<Vec> mpc_gradient(const MpcConfig& mpc, const SrbParams& model,
                                const ContactSchedule& sched, const MpcIterate& it,
                                const BilevelConfig& cfg) {
  BilevelConfig plain = cfg;
  plain.barrier_enabled = false;
  try {
    const ParamJacobians jac = param_jacobians(mpc, model, sched, it);
    return assemble_gradient(it, jac, sched, plain);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Degenerate || e.code() == ErrorCode::SingularKkt)
      return std::nullopt;
    throw;
  }
}

namespace {

class MpcProblem : public HighLevelProblem {
 public:
  MpcProblem(const MpcConfig& mpc, const SrbParams& model, const BilevelConfig& cfg,
             const ContactSchedule& sched, const MpcIterate& prev, const MpcIterate& base,
             const SrbState& x)
      : mpc_(mpc), model_(model), cfg_(cfg), sched_(sched), prev_(prev), base_(base), x_(x) {}

  Vec theta() const override { return sched_.free_values(); }
  Polytope polytope() const override { return sched_.polytope_rows(); }
  Vec cost_gradient() override {
    auto g = mpc_gradient(mpc_, model_, sched_, base_, cfg_);
    if (!g) throw Error(ErrorCode::Degenerate, "plan is degenerate");
    return *g;
  }
  double baseline_cost() override {
    if (cfg_.n_solves_eval == 1) return base_.J_A;
    return eval_cost(mpc_, model_, sched_, x_, prev_, cfg_.n_solves_eval);
  }
  void prepare_slots(int n) override { slots_.assign(n, MpcIterate{}); }
  double evaluate(const Vec& theta, int slot) override {
    const ContactSchedule s = sched_.with_free_values(theta);
    if (s.polytope_margin() < -1e-9)
      throw Error(ErrorCode::PolytopeViolation, "candidate outside the timing polytope");
    MpcIterate out;
    const double J = eval_cost(mpc_, model_, s, x_, prev_, cfg_.n_solves_eval, &out);
    if (slot >= 0) slots_[slot] = std::move(out);
    return J;
  }
  void accept(const Vec& theta, int slot) override {
    accepted_sched_ = sched_.with_free_values(theta);
    accepted_plan_ = slots_.at(slot);
  }

  std::optional<ContactSchedule> accepted_sched_;
  MpcIterate accepted_plan_;

 private:
  const MpcConfig& mpc_;
  const SrbParams& model_;
  const BilevelConfig& cfg_;
  ContactSchedule sched_;
  const MpcIterate& prev_;
  const MpcIterate& base_;
  SrbState x_;
  std::vector<MpcIterate> slots_;
};

}  // namespace

BilevelController::BilevelController(MpcConfig mpc, SrbParams model, BilevelConfig cfg,
                                     ContactSchedule sched, bool bilevel_on)
    : mpc_(std::move(mpc)),
      model_(std::move(model)),
      cfg_(std::move(cfg)),
      sched_(std::move(sched)),
      on_(bilevel_on),
      radius_(cfg_.trust_radius) {
  mpc_.validate();
  model_.validate();
  cfg_.validate();
}

CycleInfo BilevelController::cycle(double t, const SrbState& x) {
  CycleInfo info;
  if (t > sched_.t_now() + 1e-12) sched_ = sched_.advance_time(t);
  // once every k_hl solves after the warm-up
  info.high_level = on_ && k_ >= cfg_.k_start && (k_ - cfg_.k_start + 1) % cfg_.k_hl == 0;
  ++k_;

  auto t0 = Clock::now();
  MpcIterate base = rt_iteration(mpc_, model_, sched_, plan_, x);
  info.mpc_ms = ms_since(t0);
  info.stale = base.stale;
  if (!info.high_level || base.stale || sched_.num_free() == 0) {
    plan_ = std::move(base);
    return info;
  }

  MpcProblem problem(mpc_, model_, cfg_, sched_, plan_, base, x);
  t0 = Clock::now();
  Vec grad;
  try {
    grad = problem.cost_gradient();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Degenerate && e.code() != ErrorCode::SingularKkt) throw;
    info.degenerate = true;
    info.gradient_ms = ms_since(t0);
    plan_ = std::move(base);
    return info;
  }
  info.gradient_ms = ms_since(t0);

  // the gradient is already known; hand it to the generic step
  class Cached : public HighLevelProblem {
   public:
    Cached(MpcProblem& p, Vec g) : p_(p), g_(std::move(g)) {}
    Vec theta() const override { return p_.theta(); }
    Polytope polytope() const override { return p_.polytope(); }
    Vec cost_gradient() override { return g_; }
    double baseline_cost() override { return p_.baseline_cost(); }
    void prepare_slots(int n) override { p_.prepare_slots(n); }
    double evaluate(const Vec& th, int slot) override { return p_.evaluate(th, slot); }
    void accept(const Vec& th, int slot) override { p_.accept(th, slot); }

   private:
    MpcProblem& p_;
    Vec g_;
  } cached(problem, grad);

  t0 = Clock::now();
  try {
    info.step = high_level_step(cached, cfg_, radius_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BarrierDomain && e.code() != ErrorCode::LpInfeasible &&
        e.code() != ErrorCode::LpUnbounded)
      throw;
    info.degenerate = true;
  }
  info.line_search_ms = ms_since(t0);
  if (info.step && info.step->accepted && problem.accepted_sched_) {
    sched_ = *problem.accepted_sched_;
    plan_ = std::move(problem.accepted_plan_);
  } else {
    plan_ = std::move(base);
  }
  return info;
}

// ---- toy problem ----------------------------------------------------------

namespace {

struct ToyTerms {
  double s, ds, a, b;
};

ToyTerms toy_terms(const ToyProblem& t, double theta) {
  return {theta * t.T - 0.5 * theta * theta, t.T - theta, t.p0 + t.v0 * t.T - 0.5 * t.g * t.T * t.T,
          t.v0 - t.g * t.T};
}

double toy_u(const ToyProblem& t, double theta) {
  const ToyTerms k = toy_terms(t, theta);
  const double Q = t.w_p * k.s * k.s + t.w_v * theta * theta + t.rho * theta;
  const double q = t.w_p * k.s * (k.a - t.p_ref) + t.w_v * theta * (k.b - t.v_ref);
  return std::clamp(-q / Q, 0.0, t.u_max);
}

}  // namespace

QpProblem ToyProblem::qp(double theta) const {
  const ToyTerms k = toy_terms(*this, theta);
  Mat Q(1, 1), G(2, 1);
  Q(0, 0) = w_p * k.s * k.s + w_v * theta * theta + rho * theta;
  Vec q(1), h(2);
  q[0] = w_p * k.s * (k.a - p_ref) + w_v * theta * (k.b - v_ref);
  G << -1.0, 1.0;
  h << 0.0, u_max;
  return QpProblem::from_dense(Q, q, Mat(0, 1), Vec(0), G, h);
}

ParamJacobians ToyProblem::jacobians(double theta) const {
  const ToyTerms k = toy_terms(*this, theta);
  ParamJacobians jac = ParamJacobians::zeros(qp(theta), 1);
  Mat dQ(1, 1);
  dQ(0, 0) = 2.0 * w_p * k.s * k.ds + 2.0 * w_v * theta + rho;
  jac.dQ[0] = dQ.sparseView();
  jac.dq[0][0] = w_p * k.ds * (k.a - p_ref) + w_v * (k.b - v_ref);
  return jac;
}

double ToyProblem::true_cost(double theta) const {
  // QP objective without the theta-independent constant
  const ToyTerms k = toy_terms(*this, theta);
  const double u = toy_u(*this, theta);
  const double ep = k.a + u * k.s - p_ref, ev = k.b + u * theta - v_ref;
  const double c0 = 0.5 * w_p * (k.a - p_ref) * (k.a - p_ref) + 0.5 * w_v * (k.b - v_ref) * (k.b - v_ref);
  return 0.5 * w_p * ep * ep + 0.5 * w_v * ev * ev + 0.5 * rho * theta * u * u - c0;
}

double ToyProblem::true_gradient(double theta) const {
  // envelope: only the explicit theta dependence at the optimal u counts
  const ToyTerms k = toy_terms(*this, theta);
  const double u = toy_u(*this, theta);
  const double ep = k.a + u * k.s - p_ref, ev = k.b + u * theta - v_ref;
  return w_p * ep * u * k.ds + w_v * ev * u + 0.5 * rho * u * u;
}

Polytope ToyProblem::polytope() const {
  Polytope p;
  p.A_ineq.resize(2, 1);
  p.A_ineq << -1.0, 1.0;
  p.b_ineq.resize(2);
  p.b_ineq << -theta_min, theta_max;
  p.A_eq.resize(0, 1);
  p.b_eq.resize(0);
  return p;
}

namespace {

class ToyHighLevel : public HighLevelProblem {
 public:
  ToyHighLevel(const ToyProblem& toy, double theta) : toy_(toy), theta_(theta) {}

  Vec theta() const override { return Vec::Constant(1, theta_); }
  Polytope polytope() const override { return toy_.polytope(); }
  Vec cost_gradient() override {
    const QpSolution sol = solve_qp(toy_.qp(theta_));
    if (sol.status != QpStatus::Optimal) throw Error(ErrorCode::SolverFailure, "toy QP");
    baseline_ = sol.J;
    SensitivityOptions opt;
    opt.degenerate_mode = DegenerateMode::Perturb;
    return differentiate_cost(toy_.qp(theta_), sol, toy_.jacobians(theta_), opt).dJ_dtheta;
  }
  double baseline_cost() override { return baseline_; }
  void prepare_slots(int) override {}
  double evaluate(const Vec& th, int) override {
    const QpSolution sol = solve_qp(toy_.qp(th[0]));
    if (sol.status != QpStatus::Optimal) throw Error(ErrorCode::SolverFailure, "toy QP");
    return sol.J;
  }
  void accept(const Vec& th, int) override { theta_ = th[0]; }

 private:
  const ToyProblem& toy_;
  double theta_;
  double baseline_ = 0.0;
};

}  // namespace

std::vector<ToyCycle> run_toy_bilevel(const ToyProblem& toy, const BilevelConfig& cfg,
                                      double theta0, int cycles) {
  cfg.validate();
  ToyHighLevel problem(toy, theta0);
  double radius = cfg.trust_radius;
  std::vector<ToyCycle> out;
  for (int k = 0; k < cycles; ++k) {
    ToyCycle c;
    c.theta = problem.theta()[0];
    c.true_grad = toy.true_gradient(c.theta);
    c.step = high_level_step(problem, cfg, radius);
    c.grad = c.step.grad[0];
    if (cfg.barrier_enabled)
      c.grad -= cfg.barrier_weight * barrier_gradient(toy.polytope(), Vec::Constant(1, c.theta))[0];
    const Vec gap = polytope_gap(toy.polytope(), problem.theta());
    c.min_gap = gap.minCoeff();
    c.in_polytope = c.min_gap >= -1e-12;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace bmpc
