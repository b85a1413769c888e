#include <fstream>
#include <set>
#include <sstream>

#include "bmpc/sim.hpp"
#include "json.hpp"

namespace bmpc {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ScenarioInvalid, what); }

// Object reader that rejects keys nobody asked for.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_ + " must be an object");
  }
  ~Obj() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) invalid("unknown key " + path_ + "." + k);
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  void num(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) invalid(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void integer(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) invalid(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) invalid(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void str(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) invalid(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  template <int n>
  void vec(const std::string& key, Eigen::Matrix<double, n, 1>& out) {
    if (const json* v = get(key)) out = read_vec<n>(*v, where(key));
  }

  template <int n>
  static Eigen::Matrix<double, n, 1> read_vec(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != n) invalid(where + " must be an array of " + std::to_string(n));
    Eigen::Matrix<double, n, 1> out;
    for (int i = 0; i < n; ++i) {
      if (!v[i].is_number()) invalid(where + " must hold numbers");
      out[i] = v[i].get<double>();
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

MpcConfig Scenario::mpc_config() const {
  MpcConfig c = mpc;
  c.target = target_position();
  return c;
}

void Scenario::validate() const {
  if (!(duration > 0.0)) invalid("duration must be positive");
  if (!(sim_dt > 0.0)) invalid("sim_dt must be positive");
  if (sim_dt > mpc.dt + 1e-12) invalid("sim_dt must not exceed the MPC dt");
  if (!(height > 0.0)) invalid("height must be positive");
  for (const auto& d : disturbances) {
    if (d.duration < 0.0 || d.t_start < 0.0 || d.t_start + d.duration > duration + 1e-12)
      invalid("disturbance window outside [0, duration]");
    if (!d.force.allFinite()) invalid("disturbance force must be finite");
  }
  if (!(push_duration >= 0.0 && push_start >= 0.0)) invalid("push window must be non-negative");
  if (!(recovery.position_tol > 0.0 && recovery.momentum_tol > 0.0))
    invalid("recovery tolerances must be positive");
  if (!(recovery.window >= 0.0 && recovery.window <= duration)) invalid("recovery window outside the run");
  if (std::abs(initial.xi.norm() - 1.0) > 1e-9) invalid("initial quaternion must have unit norm");
  model.validate();
  mpc.validate();
  bilevel_cfg.validate();
  ContactSchedule::make(gait, schedule, 0.0);  // checks the schedule config
}

Scenario scenario_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    invalid(std::string("malformed JSON: ") + e.what());
  }
  Scenario s;
  {
    Obj o(doc, "scenario");
    o.str("name", s.name);
    o.num("duration", s.duration);
    o.num("sim_dt", s.sim_dt);
    if (const json* v = o.get("rng_seed")) {
      if (!v->is_number_unsigned()) invalid("scenario.rng_seed must be a nonnegative integer");
      s.rng_seed = v->get<std::uint64_t>();
    }
    std::string gait = to_string(s.gait);
    o.str("gait", gait);
    s.gait = gait_from_string(gait);
    if (const json* v = o.get("target")) s.target = Obj::read_vec<2>(*v, "scenario.target");
    o.num("height", s.height);
    o.boolean("bilevel", s.bilevel);
    if (const json* v = o.get("initial_state")) {
      Obj i(*v, "scenario.initial_state");
      i.vec<3>("r", s.initial.r);
      i.vec<3>("l", s.initial.l);
      i.vec<3>("Izeta", s.initial.Izeta);
      if (const json* q = i.get("quat")) {
        const Eigen::Vector4d w = Obj::read_vec<4>(*q, "scenario.initial_state.quat");
        s.initial.xi = Quat(w[0], w[1], w[2], w[3]);
      }
    } else {
      s.initial.r = Vec3(0.0, 0.0, s.height);
    }
    if (const json* v = o.get("disturbances")) {
      if (!v->is_array()) invalid("scenario.disturbances must be an array");
      for (std::size_t k = 0; k < v->size(); ++k) {
        const std::string p = "scenario.disturbances[" + std::to_string(k) + "]";
        Obj d((*v)[k], p);
        Disturbance dist;
        d.num("t_start", dist.t_start);
        d.num("duration", dist.duration);
        d.vec<3>("force", dist.force);
        s.disturbances.push_back(dist);
      }
    }
    if (const json* v = o.get("push")) {
      Obj p(*v, "scenario.push");
      p.num("t_start", s.push_start);
      p.num("duration", s.push_duration);
    }
    if (const json* v = o.get("recovery")) {
      Obj r(*v, "scenario.recovery");
      r.num("position_tol", s.recovery.position_tol);
      r.num("momentum_tol", s.recovery.momentum_tol);
      r.num("window", s.recovery.window);
    }
    if (const json* v = o.get("model")) {
      Obj m(*v, "scenario.model");
      m.num("mass", s.model.m);
      if (const json* I = m.get("inertia")) {
        const Vec3 d = Obj::read_vec<3>(*I, "scenario.model.inertia");
        s.model.I_R = d.asDiagonal();
      }
      m.num("mu", s.model.mu);
      m.num("F_b", s.model.F_b);
    }
    if (const json* v = o.get("mpc")) {
      Obj m(*v, "scenario.mpc");
      m.integer("N", s.mpc.N);
      m.num("dt", s.mpc.dt);
      m.num("touchdown_lock_fraction", s.mpc.touchdown_lock_fraction);
      m.num("swing_height", s.mpc.swing_height);
      m.integer("stance_polys", s.mpc.stance_polys);
      m.integer("swing_polys", s.mpc.swing_polys);
      m.boolean("force_slopes_free", s.mpc.force_slopes_free);
      if (const json* w = m.get("weights")) {
        Obj ww(*w, "scenario.mpc.weights");
        ww.vec<3>("r", s.mpc.weights.r);
        ww.vec<3>("l", s.mpc.weights.l);
        ww.vec<3>("delta", s.mpc.weights.delta);
        ww.vec<3>("L", s.mpc.weights.L);
        ww.num("force", s.mpc.weights.force);
        ww.num("foot", s.mpc.weights.foot);
        ww.num("spline_reg", s.mpc.weights.spline_reg);
      }
    }
    if (const json* v = o.get("schedule")) {
      Obj c(*v, "scenario.schedule");
      c.integer("C", s.schedule.C);
      c.num("k_min", s.schedule.k_min);
      c.num("k_end", s.schedule.k_end);
      c.num("period", s.schedule.period);
      c.num("swing_lock_fraction", s.schedule.swing_lock_fraction);
    }
    if (const json* v = o.get("bilevel_config")) {
      Obj b(*v, "scenario.bilevel_config");
      BilevelConfig& c = s.bilevel_cfg;
      b.integer("k_hl", c.k_hl);
      b.integer("k_start", c.k_start);
      if (const json* a = b.get("alphas")) {
        if (!a->is_array()) invalid("scenario.bilevel_config.alphas must be an array");
        c.alphas.clear();
        for (const auto& x : *a) {
          if (!x.is_number()) invalid("scenario.bilevel_config.alphas must hold numbers");
          c.alphas.push_back(x.get<double>());
        }
      }
      b.integer("n_solves_eval", c.n_solves_eval);
      b.num("trust_radius", c.trust_radius);
      b.num("trust_shrink", c.trust_shrink);
      b.num("trust_min", c.trust_min);
      b.boolean("barrier_enabled", c.barrier_enabled);
      b.num("barrier_weight", c.barrier_weight);
      b.num("c1", c.c1);
      b.num("c2", c.c2);
      b.integer("threads", c.threads);
    }
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot read scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["duration"] = s.duration;
  j["sim_dt"] = s.sim_dt;
  j["rng_seed"] = s.rng_seed;
  j["gait"] = to_string(s.gait);
  j["target"] = vec_json(s.target);
  j["height"] = s.height;
  j["bilevel"] = s.bilevel;
  j["initial_state"] = {{"r", vec_json(s.initial.r)},
                        {"l", vec_json(s.initial.l)},
                        {"quat", {s.initial.xi.w(), s.initial.xi.x(), s.initial.xi.y(), s.initial.xi.z()}},
                        {"Izeta", vec_json(s.initial.Izeta)}};
  j["disturbances"] = json::array();
  for (const auto& d : s.disturbances)
    j["disturbances"].push_back(
        {{"t_start", d.t_start}, {"duration", d.duration}, {"force", vec_json(d.force)}});
  j["push"] = {{"t_start", s.push_start}, {"duration", s.push_duration}};
  j["recovery"] = {{"position_tol", s.recovery.position_tol},
                   {"momentum_tol", s.recovery.momentum_tol},
                   {"window", s.recovery.window}};
  j["model"] = {{"mass", s.model.m},
                {"inertia", vec_json(s.model.I_R.diagonal())},
                {"mu", s.model.mu},
                {"F_b", s.model.F_b}};
  const MpcWeights& w = s.mpc.weights;
  j["mpc"] = {{"N", s.mpc.N},
              {"dt", s.mpc.dt},
              {"touchdown_lock_fraction", s.mpc.touchdown_lock_fraction},
              {"swing_height", s.mpc.swing_height},
              {"stance_polys", s.mpc.stance_polys},
              {"swing_polys", s.mpc.swing_polys},
              {"force_slopes_free", s.mpc.force_slopes_free},
              {"weights",
               {{"r", vec_json(w.r)},
                {"l", vec_json(w.l)},
                {"delta", vec_json(w.delta)},
                {"L", vec_json(w.L)},
                {"force", w.force},
                {"foot", w.foot},
                {"spline_reg", w.spline_reg}}}};
  j["schedule"] = {{"C", s.schedule.C},
                   {"k_min", s.schedule.k_min},
                   {"k_end", s.schedule.k_end},
                   {"period", s.schedule.period},
                   {"swing_lock_fraction", s.schedule.swing_lock_fraction}};
  const BilevelConfig& c = s.bilevel_cfg;
  j["bilevel_config"] = {{"k_hl", c.k_hl},
                         {"k_start", c.k_start},
                         {"alphas", c.alphas},
                         {"n_solves_eval", c.n_solves_eval},
                         {"trust_radius", c.trust_radius},
                         {"trust_shrink", c.trust_shrink},
                         {"trust_min", c.trust_min},
                         {"barrier_enabled", c.barrier_enabled},
                         {"barrier_weight", c.barrier_weight},
                         {"c1", c.c1},
                         {"c2", c.c2},
                         {"threads", c.threads}};
  return j.dump(2);
}

}  // namespace bmpc
