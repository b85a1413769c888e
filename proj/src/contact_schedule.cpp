#include "bmpc/contact_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bmpc/error.hpp"

namespace bmpc {

namespace {
constexpr double kSameTime = 1e-9;
}

ContactPhase toggle(ContactPhase p) {
  return p == ContactPhase::InContact ? ContactPhase::InSwing : ContactPhase::InContact;
}

const char* to_string(GaitPattern g) {
  switch (g) {
    case GaitPattern::Stand: return "stand";
    case GaitPattern::Trot: return "trot";
    case GaitPattern::Pace: return "pace";
  }
  return "?";
}

GaitPattern gait_from_string(const std::string& s) {
  if (s == "stand") return GaitPattern::Stand;
  if (s == "trot") return GaitPattern::Trot;
  if (s == "pace") return GaitPattern::Pace;
  throw Error(ErrorCode::ScenarioInvalid, "unknown gait '" + s + "'");
}

ContactSchedule::ContactSchedule(ScheduleConfig cfg, double t_now, std::vector<LegSchedule> legs)
    : cfg_(cfg), t_now_(t_now), legs_(std::move(legs)) {
  if (cfg_.C < 1 || !(cfg_.k_min > 0.0) || !(cfg_.k_end > 0.0) || !(cfg_.period >= cfg_.k_min))
    throw Error(ErrorCode::ScenarioInvalid, "schedule config out of range");
  for (auto& L : legs_) {
    if (!std::is_sorted(L.times.begin(), L.times.end()))
      throw Error(ErrorCode::ScenarioInvalid, "contact times must be ascending");
    L.protected_.resize(L.times.size(), false);
    L.fresh.resize(L.times.size(), false);
    refill(L);
  }
  rebuild_free_map();
}

ContactSchedule ContactSchedule::make(GaitPattern gait, const ScheduleConfig& cfg, double t_now,
                                      int num_legs) {
  std::vector<LegSchedule> legs(num_legs);
  for (int i = 0; i < num_legs; ++i) {
    LegSchedule& L = legs[i];
    if (gait == GaitPattern::Stand) {
      L.periodic = false;
      continue;
    }
    // legs 0..3 are FL, FR, HL, HR; trot pairs diagonals, pace pairs sides
    const bool first_pair = gait == GaitPattern::Trot ? (i == 0 || i == 3) : (i == 0 || i == 2);
    const double first = t_now + (first_pair ? 1.0 : 2.0) * cfg.period;
    for (int j = 0; j < cfg.C; ++j) L.times.push_back(first + j * cfg.period);
  }
  return ContactSchedule(cfg, t_now, std::move(legs));
}

void ContactSchedule::refill(LegSchedule& L) const {
  if (L.periodic) {
    while (static_cast<int>(L.times.size()) < cfg_.C) {
      double next;
      if (L.times.empty()) {
        next = std::max(t_now_, L.history.empty() ? t_now_ : L.history.back()) + cfg_.period;
      } else {
        next = L.times.back() + cfg_.period;
        next = std::min(next, L.times.front() + cfg_.k_end);
        next = std::max(next, L.times.back() + cfg_.k_min);
      }
      L.times.push_back(next);
      L.protected_.push_back(false);
      L.fresh.push_back(true);
    }
  }
  std::fill(L.protected_.begin(), L.protected_.end(), false);
  if (L.phase0 == ContactPhase::InSwing && !L.times.empty()) {
    const double liftoff = L.history.empty() ? t_now_ : L.history.back();
    const double swing = L.times.front() - liftoff;
    L.protected_[0] = t_now_ - liftoff >= cfg_.swing_lock_fraction * swing - kSameTime;
  }
}

void ContactSchedule::rebuild_free_map() {
  free_map_.clear();
  for (int i = 0; i < num_legs(); ++i)
    for (int j = 0; j < static_cast<int>(legs_[i].times.size()); ++j)
      if (!frozen(i, j)) free_map_.emplace_back(i, j);
}

bool ContactSchedule::frozen(int leg, int j) const {
  const LegSchedule& L = legs_.at(leg);
  return L.protected_.at(j) || L.fresh.at(j);
}

int ContactSchedule::free_index(int leg, int j) const {
  const auto it = std::find(free_map_.begin(), free_map_.end(), std::make_pair(leg, j));
  return it == free_map_.end() ? -1 : static_cast<int>(it - free_map_.begin());
}

Vec ContactSchedule::free_values() const {
  Vec v(num_free());
  for (int k = 0; k < num_free(); ++k) v[k] = legs_[free_map_[k].first].times[free_map_[k].second];
  return v;
}

Polytope ContactSchedule::polytope_rows() const {
  std::vector<Vec> rows;
  std::vector<double> rhs;
  const int nf = num_free();
  for (int i = 0; i < num_legs(); ++i) {
    const LegSchedule& L = legs_[i];
    const int n = static_cast<int>(L.times.size());
    // sum c_k theta_{j_k} <= b, frozen terms moved to the right
    auto add = [&](std::initializer_list<std::pair<double, int>> terms, double b) {
      Vec row = Vec::Zero(nf);
      bool any = false;
      for (const auto& [c, j] : terms) {
        const int f = free_index(i, j);
        if (f < 0) {
          b -= c * L.times[j];
        } else {
          row[f] += c;
          any = true;
        }
      }
      if (!any) return;
      rows.push_back(row);
      rhs.push_back(b);
    };
    if (n == 0) continue;
    add({{-1.0, 0}}, -t_now_);
    for (int j = 0; j + 1 < n; ++j) add({{1.0, j}, {-1.0, j + 1}}, -cfg_.k_min);
    if (n >= 2) add({{1.0, n - 1}, {-1.0, 0}}, cfg_.k_end);
  }
  Polytope p;
  p.A_ineq.resize(static_cast<Eigen::Index>(rows.size()), nf);
  p.b_ineq.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    p.A_ineq.row(r) = rows[r].transpose();
    p.b_ineq[r] = rhs[r];
  }
  p.A_eq.resize(0, nf);
  p.b_eq.resize(0);
  return p;
}

Vec ContactSchedule::polytope_slack() const {
  const Polytope p = polytope_rows();
  return p.b_ineq - p.A_ineq * free_values();
}

double ContactSchedule::polytope_margin() const {
  const Vec s = polytope_slack();
  return s.size() == 0 ? std::numeric_limits<double>::infinity() : s.minCoeff();
}

ContactSchedule ContactSchedule::advance_time(double t_new) const {
  if (t_new < t_now_) throw Error(ErrorCode::OutOfHorizon, "advance_time cannot go backwards");
  ContactSchedule out = *this;
  out.t_now_ = t_new;
  for (auto& L : out.legs_) {
    std::fill(L.fresh.begin(), L.fresh.end(), false);
    while (!L.times.empty() && L.times.front() <= t_new + kSameTime) {
      L.history.push_back(L.times.front());
      L.times.erase(L.times.begin());
      L.protected_.erase(L.protected_.begin());
      L.fresh.erase(L.fresh.begin());
      L.phase0 = toggle(L.phase0);
    }
    out.refill(L);
  }
  out.rebuild_free_map();
  return out;
}

ContactSchedule ContactSchedule::with_free_values(const Vec& theta) const {
  if (theta.size() != num_free())
    throw Error(ErrorCode::DimensionMismatch, "free value count");
  ContactSchedule out = *this;
  for (int k = 0; k < num_free(); ++k)
    out.legs_[free_map_[k].first].times[free_map_[k].second] = theta[k];
  return out;
}

ContactSchedule ContactSchedule::apply_step(const Vec& p) const {
  if (p.size() != num_free()) throw Error(ErrorCode::DimensionMismatch, "step size");
  ContactSchedule out = with_free_values(free_values() + p);
  const double margin = out.polytope_margin();
  if (margin < -1e-9)
    throw Error(ErrorCode::PolytopeViolation, "step leaves the feasible set by " +
                                                  std::to_string(-margin));
  return out;
}

ContactSchedule::Durations ContactSchedule::durations_and_jacobian() const {
  Durations d;
  int rows = 0;
  for (const auto& L : legs_) rows += static_cast<int>(L.times.size());
  d.jacobian = Mat::Zero(rows, num_free());
  int r = 0;
  for (int i = 0; i < num_legs(); ++i) {
    const LegSchedule& L = legs_[i];
    std::vector<double> dur;
    for (int j = 0; j < static_cast<int>(L.times.size()); ++j, ++r) {
      dur.push_back(L.times[j] - (j == 0 ? t_now_ : L.times[j - 1]));
      if (const int f = free_index(i, j); f >= 0) d.jacobian(r, f) += 1.0;
      if (j > 0)
        if (const int f = free_index(i, j - 1); f >= 0) d.jacobian(r, f) -= 1.0;
    }
    d.per_leg.push_back(std::move(dur));
  }
  return d;
}

std::vector<PhaseSpan> ContactSchedule::spans(int leg, double t_end) const {
  const LegSchedule& L = legs_.at(leg);
  std::vector<PhaseSpan> out;
  PhaseSpan cur;
  cur.start = t_now_;
  cur.phase = L.phase0;
  for (int j = 0; j < static_cast<int>(L.times.size()); ++j) {
    const double c = L.times[j];
    if (c >= t_end - kSameTime) break;
    if (c <= t_now_ + kSameTime) {
      // change happening right now: the current span starts after it
      cur.phase = toggle(cur.phase);
      cur.starts_at_change = true;
      continue;
    }
    cur.end = c;
    cur.ends_at_change = true;
    cur.end_free = free_index(leg, j);
    out.push_back(cur);
    PhaseSpan next;
    next.start = c;
    next.phase = toggle(cur.phase);
    next.starts_at_change = true;
    next.start_free = cur.end_free;
    cur = next;
  }
  cur.end = t_end;
  out.push_back(cur);
  return out;
}

ContactPhase ContactSchedule::phase_at(int leg, double t) const {
  const LegSchedule& L = legs_.at(leg);
  ContactPhase p = L.phase0;
  for (double c : L.times)
    if (c <= t + kSameTime) p = toggle(p);
  return p;
}

std::vector<int> ContactSchedule::free_in_horizon(double t_end) const {
  std::vector<int> out;
  for (int k = 0; k < num_free(); ++k) {
    const double c = legs_[free_map_[k].first].times[free_map_[k].second];
    if (c > t_now_ + kSameTime && c < t_end - kSameTime) out.push_back(k);
  }
  return out;
}

}  // namespace bmpc
