#pragma once

// QP approximation of the quadruped MPC. Decision vector:
//   z = [x_0 .. x_{N-1} | knots of every leg spline]
// with x_i the 12-dim tangent state relative to the orientation of x0, and
// per leg three force splines and three foot-position splines whose knots
// are (value, slope) pairs. The contact times only enter the QP through
// the spline evaluation weights at the node times.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bmpc/contact_schedule.hpp"
#include "bmpc/qp.hpp"
#include "bmpc/spline.hpp"
#include "bmpc/srb_model.hpp"

namespace bmpc {

struct MpcWeights {
  Vec3 r = Vec3(40.0, 40.0, 100.0);
  Vec3 l = Vec3(0.5, 0.5, 0.5);
  Vec3 delta = Vec3(50.0, 50.0, 20.0);
  Vec3 L = Vec3(5.0, 5.0, 5.0);
  double force = 1e-4;
  double foot = 5.0;          // xy deviation of the foot from under its hip
  double spline_reg = 1e-6;   // keeps every knot in the cost
};

struct MpcConfig {
  int N = 20;
  double dt = 0.05;
  MpcWeights weights;
  Vec3 target = Vec3(0.0, 0.0, 0.3);  // constant CoM target, level orientation
  double touchdown_lock_fraction = 0.7;
  double swing_height = 0.08;
  int stance_polys = 3;
  int swing_polys = 2;
  bool force_slopes_free = false;  // force slopes at lift-off/touch-down are decision variables
  QpSettings qp{};

  double horizon() const { return (N - 1) * dt; }
  void validate() const;  // throws ScenarioInvalid
};

/// Foot state at the start of the horizon (value and time derivative).
struct FootStart {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Everything the builder needs besides the schedule: the linearization
/// point per node and the data used for pinned knots.
struct BuildInputs {
  double t0 = 0.0;
  Quat q_ref = Quat::Identity();
  SrbState x0;
  std::vector<SrbState> x_bar;  // N states
  std::vector<SrbInput> u_bar;  // N inputs
  std::array<FootStart, kLegs> feet{};
  std::array<std::optional<Vec3>, kLegs> touchdown_pin{};
};

struct LegPlan {
  std::array<SplineTrajectory, 3> force;
  std::array<SplineTrajectory, 3> foot;
};

struct MpcIterate {
  bool valid = false;
  bool stale = false;  // last solve failed and this is a reused plan
  double t0 = 0.0;
  ContactSchedule theta_snapshot;
  BuildInputs inputs;
  QpProblem qp;
  QpSolution sol;
  double J_A = 0.0;
  double cost_constant = 0.0;  // dropped constant of the quadratic cost
  std::string structure;       // changes when the spline segment layout changes
  std::vector<SrbState> x;     // N planned states
  std::vector<SrbInput> u;     // N planned inputs at the nodes
  std::array<LegPlan, kLegs> legs;

  double tracking_cost() const { return J_A + cost_constant; }
  /// Planned input at global time t (clamped to the horizon).
  SrbInput input_at(double t) const;
};

/// Builds the linearization data for the next solve from the previous iterate
/// (or a hover guess when prev is invalid).
BuildInputs make_build_inputs(const MpcConfig& cfg, const SrbParams& model,
                              const ContactSchedule& sched, const MpcIterate& prev,
                              const SrbState& x0);

QpProblem build_qp(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                   const BuildInputs& in, double* cost_constant = nullptr,
                   std::string* structure = nullptr);

/// One build + solve. On a failed solve returns prev marked stale; throws
/// SolverFailure when there is no previous plan to fall back on.
MpcIterate rt_iteration(const MpcConfig& cfg, const SrbParams& model,
                        const ContactSchedule& sched, const MpcIterate& prev,
                        const SrbState& x0);

/// d(QP blocks)/d(theta_free) for the QP stored in `it`.
ParamJacobians param_jacobians(const MpcConfig& cfg, const SrbParams& model,
                               const ContactSchedule& sched, const MpcIterate& it);

/// J_A after n_solves real-time iterations started from warm.
double eval_cost(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                 const SrbState& x0, const MpcIterate& warm, int n_solves,
                 MpcIterate* out = nullptr);

/// Largest violation of friction / force-bound rows over the nodes of an iterate.
double force_constraint_violation(const SrbParams& model, const MpcIterate& it);
/// Largest equality residual |Az - b|.
double equality_residual(const MpcIterate& it);

}  // namespace bmpc
