#include "bmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace bmpc {

void MpcConfig::validate() const {
  if (N < 2) throw Error(ErrorCode::ScenarioInvalid, "N must be >= 2");
  if (!(dt > 0.0)) throw Error(ErrorCode::ScenarioInvalid, "dt must be positive");
  const auto& w = weights;
  const bool neg = (w.r.array() < 0).any() || (w.l.array() < 0).any() ||
                   (w.delta.array() < 0).any() || (w.L.array() < 0).any() || w.force < 0 ||
                   w.foot < 0 || !(w.spline_reg > 0);
  if (neg) throw Error(ErrorCode::ScenarioInvalid, "MPC weights must be nonnegative");
  if (stance_polys < 1 || swing_polys < 1)
    throw Error(ErrorCode::ScenarioInvalid, "polynomial counts must be >= 1");
  if (touchdown_lock_fraction < 0.0 || touchdown_lock_fraction > 1.0)
    throw Error(ErrorCode::ScenarioInvalid, "touchdown_lock_fraction outside [0, 1]");
}

namespace {

// forward-mode scalar carrying one directional derivative
struct Dual {
  double v = 0.0;
  double d = 0.0;
};
Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }
Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }

double value(double x) { return x; }
double value(Dual x) { return x.v; }
template <class T>
T scalar(double x) {
  return T{x};
}

// ---- layout -------------------------------------------------------------

struct SplineLayout {
  std::vector<double> durations;
  std::vector<SegmentKind> kinds;
  std::vector<std::vector<std::pair<int, double>>> dTs;  // per segment: (free index, coef)
  int offset = 0;
  SplineTrajectory shape;

  int num_knots() const { return static_cast<int>(durations.size()) + 1; }
  int vars() const { return 6 * num_knots(); }
  // interleaved knot index (2 * knot + slot) of component c
  int var(int c, int idx) const { return offset + c * 2 * num_knots() + idx; }

  void add(double dur, SegmentKind kind, const PhaseSpan& span, int n) {
    durations.push_back(dur);
    kinds.push_back(kind);
    std::vector<std::pair<int, double>> d;
    if (span.end_free >= 0) d.emplace_back(span.end_free, 1.0 / n);
    if (span.start_free >= 0) d.emplace_back(span.start_free, -1.0 / n);
    dTs.push_back(std::move(d));
  }
};

struct LegLayout {
  std::vector<PhaseSpan> spans;
  SplineLayout force, foot;
  std::vector<int> foot_first_knot;  // per span
  std::vector<int> force_first_knot;
};

struct Layout {
  int N = 0;
  int nz = 0;
  std::array<LegLayout, kLegs> legs;
  std::string signature;
  int xvar(int node, int j) const { return kStateDim * node + j; }
};

bool first_span_is_partial_swing(const PhaseSpan& s) {
  return s.phase == ContactPhase::InSwing && !s.starts_at_change;
}

Layout make_layout(const MpcConfig& cfg, const ContactSchedule& sched, double t0) {
  if (sched.num_legs() != kLegs)
    throw Error(ErrorCode::DimensionMismatch, "schedule must have 4 legs");
  Layout L;
  L.N = cfg.N;
  int offset = kStateDim * cfg.N;
  const double t_end = t0 + cfg.horizon();
  for (int leg = 0; leg < kLegs; ++leg) {
    LegLayout& g = L.legs[leg];
    g.spans = sched.spans(leg, t_end);
    for (std::size_t p = 0; p < g.spans.size(); ++p) {
      const PhaseSpan& s = g.spans[p];
      const double len = s.end - s.start;
      g.force_first_knot.push_back(static_cast<int>(g.force.durations.size()));
      g.foot_first_knot.push_back(static_cast<int>(g.foot.durations.size()));
      if (s.phase == ContactPhase::InContact) {
        for (int k = 0; k < cfg.stance_polys; ++k)
          g.force.add(len / cfg.stance_polys, SegmentKind::Stance, s, cfg.stance_polys);
        g.foot.add(len, SegmentKind::Stance, s, 1);
        L.signature += 'S';
      } else {
        g.force.add(len, SegmentKind::ZeroForce, s, 1);
        const int n = (p == 0 && first_span_is_partial_swing(s)) ? 1 : cfg.swing_polys;
        for (int k = 0; k < n; ++k) g.foot.add(len / n, SegmentKind::Swing, s, n);
        L.signature += n == 1 ? 'p' : 'W';
      }
    }
    L.signature += '|';
    g.force.offset = offset;
    offset += g.force.vars();
    g.foot.offset = offset;
    offset += g.foot.vars();
    g.force.shape = SplineTrajectory(t0, std::vector<Knot>(g.force.num_knots()),
                                     g.force.durations, g.force.kinds);
    g.foot.shape = SplineTrajectory(t0, std::vector<Knot>(g.foot.num_knots()), g.foot.durations,
                                    g.foot.kinds);
  }
  L.nz = offset;
  return L;
}

// ---- pinned knots -------------------------------------------------------

struct Pins {
  std::map<int, double> fixed;                // var -> value
  std::vector<std::pair<int, int>> equal;     // var_a == var_b
  std::set<int> zero_force;                   // force vars pinned to 0
};

Pins make_pins(const MpcConfig& cfg, const Layout& L, const BuildInputs& in) {
  Pins P;
  for (int leg = 0; leg < kLegs; ++leg) {
    const LegLayout& g = L.legs[leg];
    // forces: zero on knots touching a swing segment or a contact change
    const int nfk = g.force.num_knots();
    std::vector<bool> zero(nfk, false);
    for (int k = 0; k + 1 < nfk; ++k)
      if (is_zero_kind(g.force.kinds[k])) zero[k] = zero[k + 1] = true;
    for (std::size_t p = 0; p < g.spans.size(); ++p) {
      if (g.spans[p].starts_at_change) zero[g.force_first_knot[p]] = true;
      if (g.spans[p].ends_at_change)
        zero[p + 1 < g.spans.size() ? g.force_first_knot[p + 1] : nfk - 1] = true;
    }
    // a knot strictly inside a swing keeps its slope pinned in either mode
    std::vector<bool> inside(nfk, false);
    for (int k = 1; k + 1 < nfk; ++k)
      inside[k] = is_zero_kind(g.force.kinds[k - 1]) && is_zero_kind(g.force.kinds[k]);
    for (int k = 0; k < nfk; ++k)
      if (zero[k])
        for (int c = 0; c < 3; ++c)
          for (int slot = 0; slot < 2; ++slot) {
            if (slot == 1 && cfg.force_slopes_free && !inside[k]) continue;
            const int v = g.force.var(c, 2 * k + slot);
            P.fixed[v] = 0.0;
            P.zero_force.insert(v);
          }

    // feet
    const SplineLayout& f = g.foot;
    auto pin = [&](int c, int knot, int slot, double val) { P.fixed[f.var(c, 2 * knot + slot)] = val; };
    for (std::size_t p = 0; p < g.spans.size(); ++p) {
      const PhaseSpan& s = g.spans[p];
      const int k0 = g.foot_first_knot[p];
      const int k1 = p + 1 < g.spans.size() ? g.foot_first_knot[p + 1] : f.num_knots() - 1;
      if (s.phase == ContactPhase::InContact) {
        for (int c = 0; c < 3; ++c) {
          pin(c, k0, 1, 0.0);
          pin(c, k1, 1, 0.0);
        }
        pin(2, k0, 0, 0.0);
        pin(2, k1, 0, 0.0);
        for (int c = 0; c < 2; ++c) P.equal.emplace_back(f.var(c, 2 * k0), f.var(c, 2 * k1));
      } else {
        for (int k = k0 + 1; k < k1; ++k) {  // apex knots
          pin(2, k, 0, cfg.swing_height);
          pin(2, k, 1, 0.0);
        }
        pin(2, k1, 0, 0.0);
        pin(2, k1, 1, 0.0);
        if (p == 0 && in.touchdown_pin[leg] && s.ends_at_change)
          for (int c = 0; c < 2; ++c) pin(c, k1, 0, (*in.touchdown_pin[leg])[c]);
      }
    }
    // the start of the horizon is where the foot is now
    const bool stance0 = g.spans.front().phase == ContactPhase::InContact;
    for (int c = 0; c < 3; ++c) {
      pin(c, 0, 0, in.feet[leg].p[c]);
      pin(c, 0, 1, stance0 ? 0.0 : in.feet[leg].v[c]);
    }
  }
  // an equality between two pinned values is redundant
  std::vector<std::pair<int, int>> keep;
  for (const auto& e : P.equal) {
    const bool a = P.fixed.count(e.first) > 0, b = P.fixed.count(e.second) > 0;
    if (a && b) continue;
    if (a) {
      P.fixed[e.second] = P.fixed[e.first];
      continue;
    }
    if (b) {
      P.fixed[e.first] = P.fixed[e.second];
      continue;
    }
    keep.push_back(e);
  }
  P.equal = std::move(keep);
  return P;
}

// ---- node weights -------------------------------------------------------

template <class T>
struct NodeWeights {
  bool zero = true;
  std::array<int, 4> var{};  // component-0 variable, add c * 2 * num_knots
  std::array<T, 4> w{};
};

template <class T>
NodeWeights<T> node_weights(const SplineLayout& s, double t, int dir) {
  NodeWeights<T> out;
  const KnotWeights kw = s.shape.weights(t);
  out.zero = is_zero_kind(s.kinds[kw.segment]);
  for (int m = 0; m < 4; ++m) {
    out.var[m] = s.var(0, static_cast<int>(kw.index[m]));
    if constexpr (std::is_same_v<T, Dual>) {
      out.w[m].v = kw.w[m];
    } else {
      out.w[m] = kw.w[m];
    }
  }
  if constexpr (std::is_same_v<T, Dual>) {
    if (dir >= 0 && !out.zero) {
      for (std::size_t seg = 0; seg <= kw.segment; ++seg)
        for (const auto& [k, coef] : s.dTs[seg])
          if (k == dir) {
            const KnotWeights dw = s.shape.d_weights_d_duration(t, seg);
            for (int m = 0; m < 4; ++m) out.w[m].d += coef * dw.w[m];
          }
    }
  }
  return out;
}

// ---- assembly -----------------------------------------------------------

template <class T>
using Row = std::vector<std::pair<int, T>>;

template <class T>
struct Assembly {
  std::vector<Row<T>> eq;
  std::vector<double> b;
  std::vector<Row<T>> in;
  std::vector<double> h;
  std::vector<std::tuple<Row<T>, double, double>> ls;  // row, target, weight
};

struct NodeData {
  std::vector<double> t;
  std::vector<VecU> u_bar;
  std::vector<Vec12> x_bar_tan;
  std::vector<Linearization> lin;
  Vec12 x0_tan;
  Vec12 target;
};

NodeData node_data(const MpcConfig& cfg, const SrbParams& model, const BuildInputs& in) {
  if (static_cast<int>(in.x_bar.size()) != cfg.N || static_cast<int>(in.u_bar.size()) != cfg.N)
    throw Error(ErrorCode::DimensionMismatch, "guess trajectory length differs from N");
  NodeData d;
  SrbState ref;
  ref.xi = in.q_ref;
  for (int i = 0; i < cfg.N; ++i) {
    d.t.push_back(in.t0 + i * cfg.dt);
    d.u_bar.push_back(in.u_bar[i].stacked());
    d.x_bar_tan.push_back(difference(in.x_bar[i], ref));
    d.lin.push_back(linearize(in.x_bar[i], in.u_bar[i], model));
  }
  d.x0_tan = difference(in.x0, ref);
  SrbState tgt;
  tgt.r = cfg.target;
  d.target = difference(tgt, ref);
  return d;
}

template <class T>
Assembly<T> assemble(const MpcConfig& cfg, const SrbParams& model, const Layout& L,
                     const Pins& P, const NodeData& D, int dir) {
  Assembly<T> a;
  const int N = cfg.N;
  const double dt = cfg.dt;
  const T one = scalar<T>(1.0);
  const MpcWeights& W = cfg.weights;

  std::vector<std::array<NodeWeights<T>, kLegs>> fw(N), pw(N);
  for (int i = 0; i < N; ++i)
    for (int leg = 0; leg < kLegs; ++leg) {
      fw[i][leg] = node_weights<T>(L.legs[leg].force, D.t[i], dir);
      pw[i][leg] = node_weights<T>(L.legs[leg].foot, D.t[i], dir);
    }
  auto comp = [](const NodeWeights<T>& nw, const SplineLayout& s, int c, double scale, Row<T>& row) {
    if (nw.zero) return;
    for (int m = 0; m < 4; ++m)
      row.emplace_back(nw.var[m] + c * 2 * s.num_knots(), scale * nw.w[m]);
  };
  // force is structurally zero when every weighted knot is pinned to zero
  auto force_free = [&](const NodeWeights<T>& nw) {
    if (nw.zero) return false;
    for (int m = 0; m < 4; ++m)
      if (std::abs(value(nw.w[m])) > 1e-9 && P.zero_force.count(nw.var[m]) == 0) return true;
    return false;
  };

  for (int j = 0; j < kStateDim; ++j) {
    a.eq.push_back({{L.xvar(0, j), one}});
    a.b.push_back(D.x0_tan[j]);
  }
  for (int i = 0; i + 1 < N; ++i) {
    const Linearization& lin = D.lin[i];
    const Vec12 rhs = dt * (lin.f - lin.A * D.x_bar_tan[i] - lin.B * D.u_bar[i]);
    for (int r = 0; r < kStateDim; ++r) {
      Row<T> row;
      row.emplace_back(L.xvar(i + 1, r), one);
      for (int j = 0; j < kStateDim; ++j) {
        const double c = (r == j ? 1.0 : 0.0) + dt * lin.A(r, j);
        if (c != 0.0) row.emplace_back(L.xvar(i, j), scalar<T>(-c));
      }
      for (int leg = 0; leg < kLegs; ++leg)
        for (int c = 0; c < 3; ++c) {
          const double bF = lin.B(r, 3 * leg + c);
          const double bE = lin.B(r, 3 * kLegs + 3 * leg + c);
          if (bF != 0.0) comp(fw[i][leg], L.legs[leg].force, c, -dt * bF, row);
          if (bE != 0.0) comp(pw[i][leg], L.legs[leg].foot, c, -dt * bE, row);
        }
      a.eq.push_back(std::move(row));
      a.b.push_back(rhs[r]);
    }
  }
  for (const auto& [v, val] : P.fixed) {
    a.eq.push_back({{v, one}});
    a.b.push_back(val);
  }
  for (const auto& [va, vb] : P.equal) {
    a.eq.push_back({{va, one}, {vb, scalar<T>(-1.0)}});
    a.b.push_back(0.0);
  }

  for (int i = 0; i < N; ++i)
    for (int leg = 0; leg < kLegs; ++leg) {
      const SplineLayout& fs = L.legs[leg].force;
      const SplineLayout& ps = L.legs[leg].foot;
      if (force_free(fw[i][leg])) {
        auto lin_comb = [&](double sx, double sy, double sz) {
          Row<T> row;
          if (sx != 0.0) comp(fw[i][leg], fs, 0, sx, row);
          if (sy != 0.0) comp(fw[i][leg], fs, 1, sy, row);
          if (sz != 0.0) comp(fw[i][leg], fs, 2, sz, row);
          return row;
        };
        const double mu = model.mu;
        a.in.push_back(lin_comb(0, 0, -1));
        a.h.push_back(0.0);
        a.in.push_back(lin_comb(0, 0, 1));
        a.h.push_back(model.F_b);
        a.in.push_back(lin_comb(1, 0, -mu));
        a.h.push_back(0.0);
        a.in.push_back(lin_comb(-1, 0, -mu));
        a.h.push_back(0.0);
        a.in.push_back(lin_comb(0, 1, -mu));
        a.h.push_back(0.0);
        a.in.push_back(lin_comb(0, -1, -mu));
        a.h.push_back(0.0);
      }
      if (i == 0) continue;  // x_0 and the current feet are data
      const LegBox& box = model.leg_box[leg];
      const Vec3& hip = model.hip_offset[leg];
      for (int c = 0; c < 3; ++c) {
        Row<T> up, lo;
        comp(pw[i][leg], ps, c, 1.0, up);
        up.emplace_back(L.xvar(i, c), scalar<T>(-1.0));
        comp(pw[i][leg], ps, c, -1.0, lo);
        lo.emplace_back(L.xvar(i, c), one);
        a.in.push_back(std::move(up));
        a.h.push_back(box.hi[c] + hip[c]);
        a.in.push_back(std::move(lo));
        a.h.push_back(-(box.lo[c] + hip[c]));
      }
    }

  const Vec12 wx = (Vec12() << W.r, W.l, W.delta, W.L).finished();
  for (int j = 0; j < kStateDim; ++j)
    a.ls.emplace_back(Row<T>{{L.xvar(0, j), one}}, D.x0_tan[j], W.spline_reg);
  for (int i = 1; i < N; ++i)
    for (int j = 0; j < kStateDim; ++j)
      if (wx[j] > 0.0) a.ls.emplace_back(Row<T>{{L.xvar(i, j), one}}, D.target[j], wx[j]);
  for (int i = 0; i < N; ++i)
    for (int leg = 0; leg < kLegs; ++leg) {
      if (W.force > 0.0 && force_free(fw[i][leg]))
        for (int c = 0; c < 3; ++c) {
          Row<T> row;
          comp(fw[i][leg], L.legs[leg].force, c, 1.0, row);
          a.ls.emplace_back(std::move(row), 0.0, W.force);
        }
      if (W.foot > 0.0)
        for (int c = 0; c < 2; ++c) {
          Row<T> row;
          comp(pw[i][leg], L.legs[leg].foot, c, 1.0, row);
          row.emplace_back(L.xvar(i, c), scalar<T>(-1.0));
          a.ls.emplace_back(std::move(row), model.hip_offset[leg][c], W.foot);
        }
    }
  for (int v = kStateDim * N; v < L.nz; ++v) a.ls.emplace_back(Row<T>{{v, one}}, 0.0, W.spline_reg);
  return a;
}

double part(double x, bool) { return x; }
double part(Dual x, bool deriv) { return deriv ? x.d : x.v; }

template <class T>
SpMat rows_to_sparse(const std::vector<Row<T>>& rows, int nz, bool deriv) {
  std::vector<Triplet> trips;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& [c, v] : rows[r]) {
      const double x = part(v, deriv);
      if (x != 0.0) trips.emplace_back(static_cast<int>(r), c, x);
    }
  SpMat M(static_cast<Eigen::Index>(rows.size()), nz);
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

template <class T>
void cost_blocks(const Assembly<T>& a, int nz, bool deriv, SpMat& Q, Vec& q, double* constant) {
  std::vector<Triplet> trips;
  q = Vec::Zero(nz);
  double cst = 0.0;
  for (const auto& [row, target, w] : a.ls) {
    for (const auto& [i, ci] : row) {
      const double lin = part(ci, deriv);
      if (lin != 0.0) q[i] += -2.0 * w * target * lin;
      for (const auto& [j, cj] : row) {
        const double x = part(ci * cj, deriv);
        if (x != 0.0) trips.emplace_back(i, j, 2.0 * w * x);
      }
    }
    cst += w * target * target;
  }
  Q.resize(nz, nz);
  Q.setFromTriplets(trips.begin(), trips.end());
  if (constant) *constant = cst;
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

struct Built {
  Layout layout;
  Pins pins;
  NodeData data;
};

Built prepare(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
              const BuildInputs& in) {
  cfg.validate();
  if (std::abs(in.t0 - sched.t_now()) > 1e-12)
    throw Error(ErrorCode::DimensionMismatch, "build inputs are for a different time");
  Built b{make_layout(cfg, sched, in.t0), {}, node_data(cfg, model, in)};
  b.pins = make_pins(cfg, b.layout, in);
  return b;
}

SrbState reference(const Quat& q) {
  SrbState s;
  s.xi = q;
  return s;
}

SplineTrajectory spline_from(const SplineLayout& s, const Vec& z, int c, double t0) {
  std::vector<Knot> knots(s.num_knots());
  for (int k = 0; k < s.num_knots(); ++k) knots[k] = {z[s.var(c, 2 * k)], z[s.var(c, 2 * k + 1)]};
  return SplineTrajectory(t0, std::move(knots), s.durations, s.kinds);
}

}  // namespace

SrbInput MpcIterate::input_at(double t) const {
  SrbInput u;
  if (!valid) return u;
  const double tc = std::clamp(t, legs[0].force[0].t0(), legs[0].force[0].end_time());
  for (int leg = 0; leg < kLegs; ++leg)
    for (int c = 0; c < 3; ++c) {
      u.F[leg][c] = legs[leg].force[c].eval(tc).first;
      u.e[leg][c] = legs[leg].foot[c].eval(tc).first;
    }
  return u;
}

BuildInputs make_build_inputs(const MpcConfig& cfg, const SrbParams& model,
                              const ContactSchedule& sched, const MpcIterate& prev,
                              const SrbState& x0) {
  BuildInputs in;
  in.t0 = sched.t_now();
  in.q_ref = x0.xi;
  in.x0 = x0;
  in.x_bar.resize(cfg.N);
  in.u_bar.resize(cfg.N);
  const double t_end = in.t0 + cfg.horizon();
  if (prev.valid) {
    const bool same_time = std::abs(prev.t0 - in.t0) < 1e-12 && static_cast<int>(prev.x.size()) == cfg.N;
    for (int i = 0; i < cfg.N; ++i) {
      const double t = in.t0 + i * cfg.dt;
      if (same_time) {
        in.x_bar[i] = prev.x[i];
      } else {
        const double s = std::clamp((t - prev.t0) / cfg.dt, 0.0, static_cast<double>(prev.x.size() - 1));
        const auto j = std::min(static_cast<std::size_t>(s), prev.x.size() - 1);
        const double frac = s - static_cast<double>(j);
        in.x_bar[i] = j + 1 < prev.x.size()
                          ? retract(prev.x[j], frac * difference(prev.x[j + 1], prev.x[j]))
                          : prev.x[j];
      }
      in.u_bar[i] = prev.input_at(t);
    }
    for (int leg = 0; leg < kLegs; ++leg) {
      const double tc = std::clamp(in.t0, prev.legs[leg].foot[0].t0(), prev.legs[leg].foot[0].end_time());
      for (int c = 0; c < 3; ++c) {
        const auto [p, v] = prev.legs[leg].foot[c].eval(tc);
        in.feet[leg].p[c] = p;
        in.feet[leg].v[c] = v;
      }
      const LegSchedule& L = sched.leg(leg);
      if (L.phase0 == ContactPhase::InSwing && !L.times.empty() && L.times.front() < t_end) {
        const double lift = L.history.empty() ? in.t0 : L.history.back();
        const double td = L.times.front();
        const double progress = td > lift ? (in.t0 - lift) / (td - lift) : 1.0;
        if (progress >= cfg.touchdown_lock_fraction) {
          const double tp = std::clamp(td, prev.legs[leg].foot[0].t0(), prev.legs[leg].foot[0].end_time());
          in.touchdown_pin[leg] = Vec3(prev.legs[leg].foot[0].eval(tp).first,
                                       prev.legs[leg].foot[1].eval(tp).first, 0.0);
        }
      }
    }
  } else {
    for (int leg = 0; leg < kLegs; ++leg) {
      in.feet[leg].p = Vec3(x0.r.x() + model.hip_offset[leg].x(), x0.r.y() + model.hip_offset[leg].y(), 0.0);
      in.feet[leg].v.setZero();
    }
    for (int i = 0; i < cfg.N; ++i) {
      const double t = in.t0 + i * cfg.dt;
      in.x_bar[i] = x0;
      int n_stance = 0;
      for (int leg = 0; leg < kLegs; ++leg)
        n_stance += sched.phase_at(leg, t) == ContactPhase::InContact;
      for (int leg = 0; leg < kLegs; ++leg) {
        in.u_bar[i].e[leg] = in.feet[leg].p;
        if (n_stance > 0 && sched.phase_at(leg, t) == ContactPhase::InContact)
          in.u_bar[i].F[leg] = -model.m * model.g / n_stance;
      }
    }
  }
  in.x_bar[0] = x0;
  for (int i = 0; i < cfg.N; ++i)
    for (int leg = 0; leg < kLegs; ++leg)
      if (sched.phase_at(leg, in.t0 + i * cfg.dt) == ContactPhase::InSwing) in.u_bar[i].F[leg].setZero();
  return in;
}

QpProblem build_qp(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                   const BuildInputs& in, double* cost_constant, std::string* structure) {
  const Built b = prepare(cfg, model, sched, in);
  const Assembly<double> a = assemble<double>(cfg, model, b.layout, b.pins, b.data, -1);
  QpProblem qp;
  cost_blocks(a, b.layout.nz, false, qp.Q, qp.q, cost_constant);
  qp.A = rows_to_sparse(a.eq, b.layout.nz, false);
  qp.b = to_vec(a.b);
  qp.G = rows_to_sparse(a.in, b.layout.nz, false);
  qp.h = to_vec(a.h);
  if (structure) *structure = b.layout.signature;
  return qp;
}

namespace {

// one build and solve; the result is invalid when the QP did not reach optimality
MpcIterate solve_once(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                      const MpcIterate& prev, const SrbState& x0, QpStatus* status) {
  MpcIterate it;
  it.inputs = make_build_inputs(cfg, model, sched, prev, x0);
  it.qp = build_qp(cfg, model, sched, it.inputs, &it.cost_constant, &it.structure);
  const bool same_shape = prev.valid && prev.qp.num_vars() == it.qp.num_vars() &&
                          prev.qp.num_eq() == it.qp.num_eq() &&
                          prev.qp.num_ineq() == it.qp.num_ineq() && prev.structure == it.structure;
  it.sol = solve_qp(it.qp, cfg.qp, same_shape ? &prev.sol : nullptr);
  *status = it.sol.status;
  if (it.sol.status != QpStatus::Optimal) return it;
  it.valid = true;
  it.t0 = sched.t_now();
  it.theta_snapshot = sched;
  it.J_A = it.sol.J;
  const Layout layout = make_layout(cfg, sched, it.t0);
  const SrbState ref = reference(it.inputs.q_ref);
  it.x.resize(cfg.N);
  for (int i = 0; i < cfg.N; ++i)
    it.x[i] = retract(ref, it.sol.z.segment<kStateDim>(kStateDim * i));
  for (int leg = 0; leg < kLegs; ++leg)
    for (int c = 0; c < 3; ++c) {
      it.legs[leg].force[c] = spline_from(layout.legs[leg].force, it.sol.z, c, it.t0);
      it.legs[leg].foot[c] = spline_from(layout.legs[leg].foot, it.sol.z, c, it.t0);
    }
  it.u.resize(cfg.N);
  for (int i = 0; i < cfg.N; ++i) it.u[i] = it.input_at(it.t0 + i * cfg.dt);
  return it;
}

}  // namespace

MpcIterate rt_iteration(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                        const MpcIterate& prev, const SrbState& x0) {
  QpStatus status;
  MpcIterate it = solve_once(cfg, model, sched, prev, x0, &status);
  if (it.valid) return it;
  if (prev.valid) {
    // a stale linearization can make the QP infeasible; retry about the hover guess
    it = solve_once(cfg, model, sched, MpcIterate{}, x0, &status);
    if (it.valid) return it;
    MpcIterate out = prev;
    out.stale = true;
    return out;
  }
  throw Error(ErrorCode::SolverFailure,
              std::string("MPC QP ") + to_string(status) + " without a fallback plan");
}

ParamJacobians param_jacobians(const MpcConfig& cfg, const SrbParams& model,
                               const ContactSchedule& sched, const MpcIterate& it) {
  const Built b = prepare(cfg, model, sched, it.inputs);
  ParamJacobians jac = ParamJacobians::zeros(it.qp, sched.num_free());
  for (int k : sched.free_in_horizon(it.t0 + cfg.horizon())) {
    const Assembly<Dual> a = assemble<Dual>(cfg, model, b.layout, b.pins, b.data, k);
    cost_blocks(a, b.layout.nz, true, jac.dQ[k], jac.dq[k], nullptr);
    jac.dA[k] = rows_to_sparse(a.eq, b.layout.nz, true);
    jac.dG[k] = rows_to_sparse(a.in, b.layout.nz, true);
  }
  jac.check_shapes(it.qp);
  return jac;
}

double eval_cost(const MpcConfig& cfg, const SrbParams& model, const ContactSchedule& sched,
                 const SrbState& x0, const MpcIterate& warm, int n_solves, MpcIterate* out) {
  if (n_solves < 1) throw Error(ErrorCode::DimensionMismatch, "n_solves must be >= 1");
  MpcIterate cur = warm;
  for (int k = 0; k < n_solves; ++k) {
    cur = rt_iteration(cfg, model, sched, cur, x0);
    if (cur.stale) throw Error(ErrorCode::SolverFailure, "MPC QP failed during cost evaluation");
  }
  if (out) *out = cur;
  return cur.J_A;
}

double force_constraint_violation(const SrbParams& model, const MpcIterate& it) {
  double worst = 0.0;
  for (const auto& u : it.u)
    for (int leg = 0; leg < kLegs; ++leg) {
      const Vec3& F = u.F[leg];
      worst = std::max({worst, -F.z(), F.z() - model.F_b, std::abs(F.x()) - model.mu * F.z(),
                        std::abs(F.y()) - model.mu * F.z()});
    }
  return worst;
}

double equality_residual(const MpcIterate& it) {
  if (it.qp.num_eq() == 0) return 0.0;
  return (it.qp.A * it.sol.z - it.qp.b).lpNorm<Eigen::Infinity>();
}

}  // namespace bmpc
