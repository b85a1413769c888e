#pragma once

// Per-leg contact-change times (the high-level parameter). Each leg keeps
// its upcoming changes in time order; crossed changes move to `history`.
// Free entries are the ones the high-level optimizer may move, flattened
// leg-major into one vector.

#include <string>
#include <vector>

#include "bmpc/qp.hpp"

namespace bmpc {

enum class ContactPhase { InContact, InSwing };
enum class GaitPattern { Stand, Trot, Pace };

ContactPhase toggle(ContactPhase p);
const char* to_string(GaitPattern g);
GaitPattern gait_from_string(const std::string& s);

struct LegSchedule {
  ContactPhase phase0 = ContactPhase::InContact;
  std::vector<double> times;    // upcoming changes, ascending, all >= t_now
  std::vector<bool> protected_;  // swing touchdown lock
  std::vector<bool> fresh;      // appended this cycle
  std::vector<double> history;  // crossed changes
  bool periodic = true;         // Stand legs never get changes appended
};

struct ScheduleConfig {
  int C = 4;
  double k_min = 0.1;
  double k_end = 1.0;
  double period = 0.3;
  double swing_lock_fraction = 0.0;  // fraction of swing after which the touchdown is frozen
};

struct PhaseSpan {
  double start = 0.0;
  double end = 0.0;
  ContactPhase phase = ContactPhase::InContact;
  int start_free = -1;  // free index of the change that opens the span, -1 if fixed
  int end_free = -1;    // free index of the change that closes it, -1 if fixed
  bool starts_at_change = false;  // opened by a contact change (not by t_now)
  bool ends_at_change = false;    // closed by a contact change (not by horizon end)
};

class ContactSchedule {
 public:
  ContactSchedule() = default;
  ContactSchedule(ScheduleConfig cfg, double t_now, std::vector<LegSchedule> legs);

  static ContactSchedule make(GaitPattern gait, const ScheduleConfig& cfg, double t_now,
                              int num_legs = 4);

  const ScheduleConfig& config() const { return cfg_; }
  double t_now() const { return t_now_; }
  int num_legs() const { return static_cast<int>(legs_.size()); }
  const LegSchedule& leg(int i) const { return legs_.at(i); }

  bool frozen(int leg, int j) const;
  int num_free() const { return static_cast<int>(free_map_.size()); }
  int free_index(int leg, int j) const;  // -1 when frozen
  Vec free_values() const;

  /// A theta_free <= b. Rows: lower bound on each leg's first change,
  /// gap >= k_min between neighbours, spread <= k_end; frozen entries are
  /// folded into b. Rows without a free entry are dropped.
  Polytope polytope_rows() const;
  /// Minimum of b - A theta over the rows (>= 0 inside the polytope).
  double polytope_margin() const;
  Vec polytope_slack() const;

  ContactSchedule advance_time(double t_new) const;
  ContactSchedule apply_step(const Vec& p) const;  // throws PolytopeViolation
  ContactSchedule with_free_values(const Vec& theta) const;

  /// Durations theta_j - theta_{j-1} (theta_0 := t_now) per leg and their
  /// Jacobian w.r.t. the free entries (rows leg-major).
  struct Durations {
    std::vector<std::vector<double>> per_leg;
    Mat jacobian;
  };
  Durations durations_and_jacobian() const;

  /// Contact spans covering [t_now, t_end] for one leg. Changes at or beyond
  /// t_end are dropped, as are changes within 1e-9 of t_now.
  std::vector<PhaseSpan> spans(int leg, double t_end) const;
  ContactPhase phase_at(int leg, double t) const;

  /// Free entries that the spans over [t_now, t_end] depend on.
  std::vector<int> free_in_horizon(double t_end) const;

 private:
  void rebuild_free_map();
  void refill(LegSchedule& leg) const;

  ScheduleConfig cfg_;
  double t_now_ = 0.0;
  std::vector<LegSchedule> legs_;
  std::vector<std::pair<int, int>> free_map_;
};

}  // namespace bmpc
