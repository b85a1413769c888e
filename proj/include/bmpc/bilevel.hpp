#pragma once

// High-level optimizer over the free contact times: gradient of the MPC cost
// through the QP, LP step direction inside the timing polytope with a trust
// box, and a grid line search evaluated in parallel.

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "bmpc/contact_schedule.hpp"
#include "bmpc/mpc.hpp"
#include "bmpc/qp.hpp"

namespace bmpc {

struct BilevelConfig {
  int k_hl = 1;     // high-level step every k_hl controller cycles
  int k_start = 5;  // warm-up MPC solves before the first step
  std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int n_solves_eval = 1;
  double trust_radius = 0.05;
  // on a rejected step the box shrinks by this factor, and grows back on acceptance
  double trust_shrink = 0.5;
  double trust_min = 1e-4;
  bool barrier_enabled = false;
  double barrier_weight = 1e-3;
  double c1 = 1e-4;
  double c2 = 0.9;
  int threads = 0;  // line-search workers, 0 = hardware concurrency
  DegenerateMode degenerate_mode = DegenerateMode::Perturb;

  void validate() const;  // throws ScenarioInvalid
};

struct HighLevelStep {
  Vec grad;
  Vec p;
  double alpha_star = 0.0;
  double baseline = 0.0;        // cost at alpha = 0
  std::vector<double> costs;    // per alpha, NaN when the evaluation failed
  bool accepted = false;
  bool wolfe_armijo_ok = false;
  double trust_radius = 0.0;    // box used for p
  int best_index = -1;
};

/// Rows g(theta) = b - A theta >= 0 of a polytope.
Vec polytope_gap(const Polytope& poly, const Vec& theta);
/// Gradient of B(theta) = -sum ln g_j(theta). Throws BarrierDomain if some g_j <= 0.
Vec barrier_gradient(const Polytope& poly, const Vec& theta);
double barrier_value(const Polytope& poly, const Vec& theta);

/// dJ/dtheta of the QP in `iterate` for the parameter Jacobians `jac`, plus
/// the weighted barrier gradient when enabled.
Vec assemble_gradient(const MpcIterate& iterate, const ParamJacobians& jac,
                      const ContactSchedule& sched, const BilevelConfig& cfg,
                      std::vector<int>* degenerate = nullptr);

/// argmin <grad, p> s.t. A (theta + p) <= b, |p|_inf <= radius.
Vec step_direction(const Vec& grad, const Polytope& poly, const Vec& theta, double radius);
Vec step_direction(const Vec& grad, const ContactSchedule& sched, const BilevelConfig& cfg);

/// Cost of the lower level at a candidate theta. Called concurrently with
/// distinct slot indices (one per alpha); throws on solver failure.
using CostEvaluator = std::function<double(const Vec& theta, int slot)>;

/// Grid line search along p. `baseline` is the cost at alpha = 0 when known.
HighLevelStep line_search(const CostEvaluator& eval, const Vec& theta, const Vec& grad,
                          const Vec& p, const BilevelConfig& cfg,
                          std::optional<double> baseline = std::nullopt);

/// A lower-level problem seen from the high level.
class HighLevelProblem {
 public:
  virtual ~HighLevelProblem() = default;
  virtual Vec theta() const = 0;
  virtual Polytope polytope() const = 0;  // absolute rows, A theta <= b
  /// Gradient of the approximate cost at theta (without the barrier).
  virtual Vec cost_gradient() = 0;
  virtual double baseline_cost() = 0;
  /// Sized before every line search; evaluate(theta, slot) writes only its slot.
  virtual void prepare_slots(int n) = 0;
  virtual double evaluate(const Vec& theta, int slot) = 0;
  virtual void accept(const Vec& theta, int slot) = 0;
};

/// One gradient -> LP -> line search -> update cycle. `radius` is the
/// current trust box and is updated in place.
HighLevelStep high_level_step(HighLevelProblem& problem, const BilevelConfig& cfg,
                              double& radius);

// ---- closed-loop controller -------------------------------------------------

struct CycleInfo {
  bool high_level = false;
  std::optional<HighLevelStep> step;
  bool degenerate = false;   // gradient skipped
  bool stale = false;        // MPC fell back to the previous plan
  double mpc_ms = 0.0;
  double gradient_ms = 0.0;
  double line_search_ms = 0.0;
};

/// Runs the MPC every cycle and, when enabled, a high-level step every
/// k_hl cycles after the warm-up.
class BilevelController {
 public:
  BilevelController(MpcConfig mpc, SrbParams model, BilevelConfig cfg, ContactSchedule sched,
                    bool bilevel_on);

  /// Controller cycle at time t from plant state x. Throws SolverFailure
  /// only when no plan exists at all.
  CycleInfo cycle(double t, const SrbState& x);

  const MpcIterate& plan() const { return plan_; }
  const ContactSchedule& schedule() const { return sched_; }
  const MpcConfig& mpc_config() const { return mpc_; }
  int cycles() const { return k_; }

 private:
  MpcConfig mpc_;
  SrbParams model_;
  BilevelConfig cfg_;
  ContactSchedule sched_;
  bool on_;
  MpcIterate plan_;
  int k_ = 0;
  double radius_;
};

/// Gradient of the MPC cost in every free contact time at the current plan,
/// by the QP sensitivity route (empty when the plan is degenerate).
std::optional<Vec> mpc_gradient(const MpcConfig& mpc, const SrbParams& model,
                                const ContactSchedule& sched, const MpcIterate& it,
                                const BilevelConfig& cfg);

// ---- toy problem ----------------------------------------------------------
//
// Vertical double integrator p'' = u - g on [0, T]. The input u1 >= 0 acts
// during the stance phase [0, theta] and is zero in flight. The QP picks u1
// to bring (p, v)(T) to a target; theta is the lift-off time.

struct ToyProblem {
  double T = 1.0;
  double g = 1.0;
  double p0 = 0.0, v0 = 0.0;
  double p_ref = 0.2, v_ref = 0.0;
  double w_p = 1.0, w_v = 1.0;
  double rho = 0.01;
  double u_max = 20.0;
  double theta_min = 0.1, theta_max = 0.95;

  QpProblem qp(double theta) const;
  ParamJacobians jacobians(double theta) const;
  /// Optimal cost and its derivative worked out by hand.
  double true_cost(double theta) const;
  double true_gradient(double theta) const;
  Polytope polytope() const;
};

struct ToyCycle {
  double theta = 0.0;
  double grad = 0.0;
  double true_grad = 0.0;
  HighLevelStep step;
  bool in_polytope = true;
  double min_gap = 0.0;
};

std::vector<ToyCycle> run_toy_bilevel(const ToyProblem& toy, const BilevelConfig& cfg,
                                      double theta0, int cycles);

}  // namespace bmpc
