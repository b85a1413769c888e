#include "bmpc/sim.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace bmpc {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

Vec3 disturbance_at(const std::vector<Disturbance>& ds, double t) {
  Vec3 f = Vec3::Zero();
  for (const auto& d : ds)
    if (t >= d.t_start - 1e-12 && t < d.t_start + d.duration - 1e-12) f += d.force;
  return f;
}

std::vector<std::vector<double>> schedule_snapshot(const ContactSchedule& s) {
  std::vector<std::vector<double>> out;
  for (int leg = 0; leg < s.num_legs(); ++leg) out.push_back(s.leg(leg).times);
  return out;
}

struct Means {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
};

}  // namespace

RunResult run_scenario(const Scenario& sc) {
  sc.validate();
  RunResult res;
  RunSummary& sum = res.summary;
  sum.name = sc.name;
  sum.bilevel = sc.bilevel;

  const MpcConfig mpc = sc.mpc_config();
  BilevelController ctl(mpc, sc.model, sc.bilevel_cfg,
                        ContactSchedule::make(sc.gait, sc.schedule, 0.0), sc.bilevel);
  const int cycles = static_cast<int>(std::llround(sc.duration / mpc.dt));
  const int sub = std::max(1, static_cast<int>(std::llround(mpc.dt / sc.sim_dt)));
  const double h = mpc.dt / sub;

  SrbState x = sc.initial;
  Means cost, mpc_ms, grad_ms, ls_ms;
  const double t_end = cycles * mpc.dt;
  Vec3 l_sum = Vec3::Zero();
  int l_count = 0;
  for (int k = 0; k < cycles; ++k) {
    const double t = k * mpc.dt;
    TraceRecord rec;
    rec.k = k;
    rec.t = t;
    rec.x = x;
    sum.max_drift = std::max(sum.max_drift, (x.r - sc.initial.r).norm());
    CycleInfo info;
    try {
      info = ctl.cycle(t, x);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SolverFailure) throw;
      sum.failed = true;
      sum.failure = e.what();
      break;
    }
    const MpcIterate& plan = ctl.plan();
    rec.J_A = plan.J_A;
    rec.tracking_cost = plan.tracking_cost();
    rec.stale = info.stale;
    if (info.degenerate) rec.event = HighLevelEvent::Degenerate;
    if (info.step) {
      rec.event = HighLevelEvent::Step;
      rec.grad_norm = info.step->grad.norm();
      rec.alpha_star = info.step->alpha_star;
      rec.accepted = info.step->accepted;
    }
    rec.schedule = schedule_snapshot(ctl.schedule());
    if (!info.stale) {
      rec.eq_residual = equality_residual(plan);
      rec.force_violation = std::max(0.0, force_constraint_violation(sc.model, plan));
    }
    rec.mpc_ms = info.mpc_ms;
    rec.gradient_ms = info.gradient_ms;
    rec.line_search_ms = info.line_search_ms;

    cost.add(rec.tracking_cost);
    mpc_ms.add(info.mpc_ms);
    if (info.high_level) {
      ++sum.high_level_steps;
      grad_ms.add(info.gradient_ms);
      if (info.step) ls_ms.add(info.line_search_ms);
    }
    sum.accepted_steps += rec.accepted;
    sum.stale_cycles += rec.stale;
    sum.degenerate_steps += info.degenerate;
    sum.max_eq_residual = std::max(sum.max_eq_residual, rec.eq_residual);
    sum.max_force_violation = std::max(sum.max_force_violation, rec.force_violation);
    sum.cycle_ms_max =
        std::max(sum.cycle_ms_max, info.mpc_ms + info.gradient_ms + info.line_search_ms);
    res.trace.push_back(std::move(rec));

    for (int j = 0; j < sub; ++j) {
      const double s = t + j * h;
      SrbInput u = plan.input_at(s);
      u.external = disturbance_at(sc.disturbances, s);
      x = integrate(x, u, h, sc.model);
      if (s + h > t_end - sc.recovery.window + 1e-9) {
        l_sum += x.l;
        ++l_count;
      }
    }
    if (!x.r.allFinite() || !x.l.allFinite()) {
      sum.failed = true;
      sum.failure = "plant state diverged";
      break;
    }
  }
  sum.cycles = static_cast<int>(res.trace.size());
  sum.final_position_error = (x.r - sc.target_position()).norm();
  sum.final_momentum = l_count ? (l_sum / l_count).norm() : x.l.norm();
  sum.recovered = !sum.failed && sum.final_position_error < sc.recovery.position_tol &&
                  sum.final_momentum < sc.recovery.momentum_tol;
  sum.average_cost = cost.mean();
  sum.mpc_ms_mean = mpc_ms.mean();
  sum.gradient_ms_mean = grad_ms.mean();
  sum.line_search_ms_mean = ls_ms.mean();
  return res;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace, bool with_timing) {
  os << "k,t,rx,ry,rz,lx,ly,lz,qw,qx,qy,qz,Izx,Izy,Izz,J_A,tracking_cost,event,grad_norm,"
        "alpha_star,accepted,stale,eq_residual,force_violation,schedule";
  if (with_timing) os << ",mpc_ms,gradient_ms,line_search_ms";
  os << '\n';
  const auto f = format_double;
  for (const auto& r : trace) {
    os << r.k << ',' << f(r.t);
    for (int i = 0; i < 3; ++i) os << ',' << f(r.x.r[i]);
    for (int i = 0; i < 3; ++i) os << ',' << f(r.x.l[i]);
    os << ',' << f(r.x.xi.w()) << ',' << f(r.x.xi.x()) << ',' << f(r.x.xi.y()) << ','
       << f(r.x.xi.z());
    for (int i = 0; i < 3; ++i) os << ',' << f(r.x.Izeta[i]);
    const char* ev = r.event == HighLevelEvent::Step         ? "step"
                     : r.event == HighLevelEvent::Degenerate ? "degenerate"
                                                             : "none";
    os << ',' << f(r.J_A) << ',' << f(r.tracking_cost) << ',' << ev << ',' << f(r.grad_norm)
       << ',' << f(r.alpha_star) << ',' << r.accepted << ',' << r.stale << ','
       << f(r.eq_residual) << ',' << f(r.force_violation) << ',';
    // legs separated by '|', times by ' '
    for (std::size_t leg = 0; leg < r.schedule.size(); ++leg) {
      if (leg) os << '|';
      for (std::size_t j = 0; j < r.schedule[leg].size(); ++j)
        os << (j ? " " : "") << f(r.schedule[leg][j]);
    }
    if (with_timing) os << ',' << f(r.mpc_ms) << ',' << f(r.gradient_ms) << ',' << f(r.line_search_ms);
    os << '\n';
  }
}

std::string summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["bilevel"] = s.bilevel;
  j["recovered"] = s.recovered;
  j["failed"] = s.failed;
  if (s.failed) j["failure"] = s.failure;
  j["final_position_error"] = s.final_position_error;
  j["final_momentum"] = s.final_momentum;
  j["max_drift"] = s.max_drift;
  j["average_cost"] = s.average_cost;
  j["cycles"] = s.cycles;
  j["high_level_steps"] = s.high_level_steps;
  j["accepted_steps"] = s.accepted_steps;
  j["stale_cycles"] = s.stale_cycles;
  j["degenerate_steps"] = s.degenerate_steps;
  j["max_eq_residual"] = s.max_eq_residual;
  j["max_force_violation"] = s.max_force_violation;
  j["timing_ms"] = {{"mpc_mean", s.mpc_ms_mean},
                    {"gradient_mean", s.gradient_ms_mean},
                    {"line_search_mean", s.line_search_ms_mean},
                    {"cycle_max", s.cycle_ms_max}};
  return j.dump(2);
}

// ---- disturbance matrix ------------------------------------------------------

PushAxis push_axis_from_string(const std::string& s) {
  if (s == "x") return PushAxis::X;
  if (s == "y") return PushAxis::Y;
  if (s == "xy") return PushAxis::XY;
  throw Error(ErrorCode::ScenarioInvalid, "axis must be x, y or xy");
}

const char* to_string(PushAxis a) {
  switch (a) {
    case PushAxis::X: return "x";
    case PushAxis::Y: return "y";
    case PushAxis::XY: return "xy";
  }
  return "?";
}

Scenario with_push(const Scenario& base, PushAxis axis, double force) {
  Scenario s = base;
  Disturbance d;
  d.t_start = base.push_start;
  d.duration = base.push_duration;
  // for xy the magnitude is applied on both axes at once
  d.force = Vec3(axis != PushAxis::Y ? force : 0.0, axis != PushAxis::X ? force : 0.0, 0.0);
  s.disturbances = {d};
  s.name = base.name + "_" + to_string(axis) + "_" + format_double(force);
  return s;
}

std::vector<MatrixCell> run_matrix(const Scenario& base, PushAxis axis,
                                   const std::vector<double>& forces) {
  if (forces.empty()) throw Error(ErrorCode::ScenarioInvalid, "empty force list");
  std::vector<MatrixCell> cells;
  for (double f : forces) {
    MatrixCell c;
    c.axis = axis;
    c.force = f;
    for (bool on : {true, false}) {
      Scenario s = with_push(base, axis, f);
      s.bilevel = on;
      RunSummary r;
      try {
        r = run_scenario(s).summary;
      } catch (const Error& e) {
        r.name = s.name;
        r.bilevel = on;
        r.failed = true;
        r.failure = e.what();
      }
      (on ? c.on : c.off) = r;
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

void print_matrix(std::ostream& os, const std::vector<MatrixCell>& cells) {
  os << "axis  force_N  bilevel_on  bilevel_off\n";
  std::map<std::string, std::array<int, 3>> totals;
  std::vector<std::string> order;
  for (const auto& c : cells) {
    const std::string a = to_string(c.axis);
    if (!totals.count(a)) order.push_back(a);
    auto& t = totals[a];
    t[0] += c.on.recovered;
    t[1] += c.off.recovered;
    t[2] += 1;
    auto mark = [](const RunSummary& r) { return r.failed ? "failed" : r.recovered ? "yes" : "no"; };
    os << std::left << std::setw(6) << a << std::setw(9) << format_double(c.force) << std::setw(12)
       << mark(c.on) << mark(c.off) << '\n';
  }
  os << "\nDirection  High-Level Opt.  Without High-Level Opt.\n";
  for (const auto& a : order) {
    const auto& t = totals[a];
    os << std::left << std::setw(11) << (a == "xy" ? "x and y" : a) << std::setw(17)
       << (std::to_string(t[0]) + "/" + std::to_string(t[2]))
       << (std::to_string(t[1]) + "/" + std::to_string(t[2])) << '\n';
  }
}

// ---- gradient check -------------------------------------------------------

GradCheckReport grad_check(const Scenario& sc, int trials) {
  if (trials < 1) throw Error(ErrorCode::ScenarioInvalid, "trials must be >= 1");
  sc.validate();
  GradCheckReport rep;
  const MpcConfig mpc = sc.mpc_config();
  const int cycles = static_cast<int>(std::llround(sc.duration / mpc.dt));
  std::mt19937_64 rng(sc.rng_seed);
  const int first = std::min(sc.bilevel_cfg.k_start, cycles - 1);
  std::uniform_int_distribution<int> pick(first, cycles - 1);
  std::vector<int> when(trials);
  for (int& w : when) w = pick(rng);
  std::sort(when.begin(), when.end());

  BilevelConfig report = sc.bilevel_cfg;
  report.degenerate_mode = DegenerateMode::Report;
  report.barrier_enabled = false;
  BilevelController ctl(mpc, sc.model, sc.bilevel_cfg, ContactSchedule::make(sc.gait, sc.schedule, 0.0),
                        false);
  const int sub = std::max(1, static_cast<int>(std::llround(mpc.dt / sc.sim_dt)));
  const double h_sim = mpc.dt / sub;
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);
  SrbState x = sc.initial;
  std::size_t next = 0;
  for (int k = 0; k < cycles && next < when.size(); ++k) {
    const double t = k * mpc.dt;
    const MpcIterate prev = ctl.plan();
    ctl.cycle(t, x);
    for (; next < when.size() && when[next] == k; ++next) {
      ++rep.trials;
      ContactSchedule s = ctl.schedule();
      if (s.num_free() == 0) continue;
      // move the times off the node grid so the differences do not straddle a kink
      for (int attempt = 0; attempt < 20; ++attempt) {
        Vec th = s.free_values();
        for (Eigen::Index j = 0; j < th.size(); ++j) th[j] += jitter(rng);
        const ContactSchedule c = s.with_free_values(th);
        if (c.polytope_margin() > 1e-6) {
          s = c;
          break;
        }
      }
      MpcIterate base;
      try {
        base = rt_iteration(mpc, sc.model, s, prev, x);
      } catch (const Error&) {
        ++rep.degenerate;
        continue;
      }
      if (base.stale) {
        ++rep.degenerate;
        continue;
      }
      const auto g = mpc_gradient(mpc, sc.model, s, base, report);
      if (!g) {
        ++rep.degenerate;
        continue;
      }
      rep.max_grad_norm = std::max(rep.max_grad_norm, g->norm());
      const Vec th = s.free_values();
      double err = 0.0, scale = 0.0;
      for (int j : s.free_in_horizon(t + mpc.horizon())) {
        const double c = th[j];
        const double r = (c - t) / mpc.dt;
        if (std::abs(r - std::round(r)) * mpc.dt < 1e-4) {
          ++rep.skipped_kinks;
          continue;
        }
        const double h = 1e-6;
        Vec tp = th, tm = th;
        tp[j] += h;
        tm[j] -= h;
        double fd;
        try {
          const double Jp = eval_cost(mpc, sc.model, s.with_free_values(tp), x, prev, 1);
          const double Jm = eval_cost(mpc, sc.model, s.with_free_values(tm), x, prev, 1);
          fd = (Jp - Jm) / (2 * h);
        } catch (const Error&) {
          continue;
        }
        err = std::max(err, std::abs(fd - (*g)[j]));
        scale = std::max(scale, std::abs(fd));
        ++rep.checked_entries;
      }
      if (scale > 0.0) rep.max_rel_error = std::max(rep.max_rel_error, err / std::max(scale, 1e-6));
    }
    const MpcIterate& plan = ctl.plan();
    for (int j = 0; j < sub; ++j) {
      const double s = t + j * h_sim;
      SrbInput u = plan.input_at(s);
      u.external = disturbance_at(sc.disturbances, s);
      x = integrate(x, u, h_sim, sc.model);
    }
  }
  return rep;
}

// ---- benchmark --------------------------------------------------------------

std::vector<BenchmarkRow> benchmark(const Scenario& sc, const std::vector<int>& nodes) {
  if (nodes.empty()) throw Error(ErrorCode::ScenarioInvalid, "empty node list");
  const std::map<int, std::pair<double, std::array<double, 3>>> published = {
      {20, {0.05, {8.0, 3.8, 19.5}}}, {33, {0.033, {13.9, 7.0, 35.9}}}, {50, {0.02, {25.8, 14.1, 72.8}}}};
  std::vector<BenchmarkRow> rows;
  for (int n : nodes) {
    if (n < 2) throw Error(ErrorCode::ScenarioInvalid, "node count must be >= 2");
    BenchmarkRow row;
    row.nodes = n;
    const auto it = published.find(n);
    row.dt = it != published.end() ? it->second.first : 1.0 / n;
    if (it != published.end()) row.reference = it->second.second;
    Scenario s = sc;
    s.mpc.N = n;
    s.mpc.dt = row.dt;
    s.sim_dt = row.dt / std::max(1.0, std::round(row.dt / 0.005));
    s.duration = std::min(sc.duration, 2.0);
    s.bilevel = true;
    s.disturbances.clear();
    s.push_start = 0.0;
    s.push_duration = 0.0;
    const RunSummary r = run_scenario(s).summary;
    row.mpc_ms = r.mpc_ms_mean;
    row.gradient_ms = r.gradient_ms_mean;
    row.line_search_ms = r.line_search_ms_mean;
    rows.push_back(row);
  }
  return rows;
}

void print_benchmark(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "Nodes  dt (s)  MPC (ms)  Gradient (ms)  Line Search (ms)  | published MPC / Gradient / "
        "Line Search (ms)\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(7) << r.nodes << std::setw(8) << std::setprecision(3) << r.dt
       << std::setw(10) << std::setprecision(1) << r.mpc_ms << std::setw(15) << r.gradient_ms
       << std::setw(18) << r.line_search_ms << "| ";
    if (r.reference)
      os << (*r.reference)[0] << " / " << (*r.reference)[1] << " / " << (*r.reference)[2];
    else
      os << "-";
    os << '\n';
  }
  os << std::defaultfloat;
}

}  // namespace bmpc
