#pragma once

// Closed-loop harness: the SRB plant driven by the planned forces of the
// (bilevel) MPC, with pushes at the CoM, plus the scenario file format.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bmpc/bilevel.hpp"

namespace bmpc {

struct Disturbance {
  double t_start = 0.0;
  double duration = 0.0;
  Vec3 force = Vec3::Zero();
};

struct RecoveryCriterion {
  double position_tol = 0.1;  // m, CoM to target
  double momentum_tol = 0.5;  // kg m/s
  double window = 0.3;        // s, momentum is averaged over the final window
};

struct Scenario {
  std::string name = "unnamed";
  double duration = 5.0;
  double sim_dt = 0.005;
  std::uint64_t rng_seed = 1;
  GaitPattern gait = GaitPattern::Stand;
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  double height = 0.3;
  SrbState initial;
  std::vector<Disturbance> disturbances;
  bool bilevel = true;
  // pushes used by the disturbance matrix
  double push_start = 1.0;
  double push_duration = 0.3;
  RecoveryCriterion recovery;
  SrbParams model;
  MpcConfig mpc;
  ScheduleConfig schedule;
  BilevelConfig bilevel_cfg;

  Vec3 target_position() const { return Vec3(target.x(), target.y(), height); }
  MpcConfig mpc_config() const;  // mpc with the scenario target filled in
  void validate() const;         // throws ScenarioInvalid
};

/// Parses a scenario document. Unknown keys and malformed values throw
/// ScenarioInvalid; absent keys keep their defaults.
Scenario scenario_from_json(const std::string& text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_json(const Scenario& s);

enum class HighLevelEvent { None, Step, Degenerate };

struct TraceRecord {
  int k = 0;
  double t = 0.0;
  SrbState x;
  double J_A = 0.0;
  double tracking_cost = 0.0;
  HighLevelEvent event = HighLevelEvent::None;
  double grad_norm = 0.0;
  double alpha_star = 0.0;
  bool accepted = false;
  bool stale = false;
  std::vector<std::vector<double>> schedule;  // upcoming contact times per leg
  double eq_residual = 0.0;
  double force_violation = 0.0;
  double mpc_ms = 0.0;
  double gradient_ms = 0.0;
  double line_search_ms = 0.0;
};

struct RunSummary {
  std::string name;
  bool bilevel = false;
  bool recovered = false;
  bool failed = false;  // solver hard failure
  std::string failure;
  double final_position_error = 0.0;
  double final_momentum = 0.0;  // mean over the recovery window
  double max_drift = 0.0;
  double average_cost = 0.0;
  int cycles = 0;
  int high_level_steps = 0;
  int accepted_steps = 0;
  int stale_cycles = 0;
  int degenerate_steps = 0;
  double max_eq_residual = 0.0;
  double max_force_violation = 0.0;
  double mpc_ms_mean = 0.0;
  double gradient_ms_mean = 0.0;
  double line_search_ms_mean = 0.0;
  double cycle_ms_max = 0.0;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  RunSummary summary;
};

/// Lockstep closed loop: a controller cycle every mpc.dt, the plant
/// integrated at sim_dt with zero-order-held planned inputs. A solver hard
/// failure ends the run and is reported in the summary.
RunResult run_scenario(const Scenario& scenario);

/// CSV with a fixed header; wall times are left out unless asked for so that
/// runs are byte-for-byte reproducible.
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace,
                     bool with_timing = false);
std::string summary_to_json(const RunSummary& s);

enum class PushAxis { X, Y, XY };
PushAxis push_axis_from_string(const std::string& s);
const char* to_string(PushAxis a);

struct MatrixCell {
  PushAxis axis = PushAxis::X;
  double force = 0.0;
  RunSummary on, off;
};

/// Scenario with its disturbances replaced by one push of the given size.
Scenario with_push(const Scenario& base, PushAxis axis, double force);
std::vector<MatrixCell> run_matrix(const Scenario& base, PushAxis axis,
                                   const std::vector<double>& forces);
void print_matrix(std::ostream& os, const std::vector<MatrixCell>& cells);

struct GradCheckReport {
  int trials = 0;
  int checked_entries = 0;
  int degenerate = 0;     // snapshots whose QP lacked strict complementarity
  int skipped_kinks = 0;  // entries too close to a node time
  double max_rel_error = 0.0;
  double max_grad_norm = 0.0;
};

/// Compares the QP-sensitivity gradient with central differences of
/// eval_cost at random snapshots of a closed-loop run.
GradCheckReport grad_check(const Scenario& scenario, int trials);

struct BenchmarkRow {
  int nodes = 0;
  double dt = 0.0;
  double mpc_ms = 0.0;
  double gradient_ms = 0.0;
  double line_search_ms = 0.0;
  std::optional<std::array<double, 3>> reference;  // published timings
};

std::vector<BenchmarkRow> benchmark(const Scenario& scenario, const std::vector<int>& nodes);
void print_benchmark(std::ostream& os, const std::vector<BenchmarkRow>& rows);

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

}  // namespace bmpc
