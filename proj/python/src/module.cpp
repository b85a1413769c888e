#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bmpc/bilevel.hpp"
#include "bmpc/sim.hpp"

namespace py = pybind11;
using namespace bmpc;

namespace {

py::dict solution_dict(const QpSolution& s) {
  py::dict d;
  d["z"] = s.z;
  d["lambda"] = s.lambda;
  d["nu"] = s.nu;
  d["J"] = s.J;
  d["status"] = to_string(s.status);
  return d;
}

QpProblem dense(const Mat& Q, const Vec& q, const Mat& A, const Vec& b, const Mat& G, const Vec& h) {
  return QpProblem::from_dense(Q, q, A, b, G, h);
}

}  // namespace

PYBIND11_MODULE(_bmpc, m) {
  m.doc() = "bilevel MPC gait timing: QP sensitivities, toy problem, closed-loop runs";

  static py::exception<Error> err(m, "BmpcError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(err.ptr(), (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "solve_qp",
      [](const Mat& Q, const Vec& q, const Mat& A, const Vec& b, const Mat& G, const Vec& h) {
        return solution_dict(solve_qp(dense(Q, q, A, b, G, h)));
      },
      py::arg("Q"), py::arg("q"), py::arg("A"), py::arg("b"), py::arg("G"), py::arg("h"));

  // dJ/dtheta for omega(theta); each list holds one dense block per parameter
  m.def(
      "cost_gradient",
      [](const Mat& Q, const Vec& q, const Mat& A, const Vec& b, const Mat& G, const Vec& h,
         const std::vector<Mat>& dQ, const std::vector<Vec>& dq, const std::vector<Mat>& dA,
         const std::vector<Vec>& db, const std::vector<Mat>& dG, const std::vector<Vec>& dh,
         bool adjoint) {
        const QpProblem p = dense(Q, q, A, b, G, h);
        const QpSolution s = solve_qp(p);
        if (s.status != QpStatus::Optimal)
          throw Error(ErrorCode::SolverFailure, std::string("QP ") + to_string(s.status));
        ParamJacobians jac;
        jac.num_params = static_cast<int>(dq.size());
        for (const auto& x : dQ) jac.dQ.push_back(x.sparseView());
        jac.dq = dq;
        for (const auto& x : dA) jac.dA.push_back(x.sparseView());
        jac.db = db;
        for (const auto& x : dG) jac.dG.push_back(x.sparseView());
        jac.dh = dh;
        return differentiate_cost(p, s, jac, {}, adjoint ? GradientPath::Adjoint : GradientPath::Forward)
            .dJ_dtheta;
      },
      py::arg("Q"), py::arg("q"), py::arg("A"), py::arg("b"), py::arg("G"), py::arg("h"),
      py::arg("dQ"), py::arg("dq"), py::arg("dA"), py::arg("db"), py::arg("dG"), py::arg("dh"),
      py::arg("adjoint") = true);

  py::class_<ToyProblem>(m, "ToyProblem")
      .def(py::init<>())
      .def_readwrite("theta_min", &ToyProblem::theta_min)
      .def_readwrite("theta_max", &ToyProblem::theta_max)
      .def_readwrite("p_ref", &ToyProblem::p_ref)
      .def("true_cost", &ToyProblem::true_cost)
      .def("true_gradient", &ToyProblem::true_gradient);

  m.def(
      "run_toy",
      [](const ToyProblem& toy, double theta0, int cycles, bool barrier) {
        BilevelConfig cfg;
        cfg.barrier_enabled = barrier;
        py::list out;
        for (const auto& c : run_toy_bilevel(toy, cfg, theta0, cycles)) {
          py::dict d;
          d["theta"] = c.theta;
          d["grad"] = c.grad;
          d["true_grad"] = c.true_grad;
          d["accepted"] = c.step.accepted;
          d["alpha"] = c.step.alpha_star;
          d["in_polytope"] = c.in_polytope;
          out.append(d);
        }
        return out;
      },
      py::arg("toy"), py::arg("theta0"), py::arg("cycles"), py::arg("barrier") = false);

  m.def("validate_scenario", [](const std::string& text) { return scenario_to_json(scenario_from_json(text)); },
        "Parses a scenario document and returns it with defaults filled in.");

  // returns (summary json, trace csv)
  m.def(
      "simulate",
      [](const std::string& text, std::optional<bool> bilevel) {
        Scenario s = scenario_from_json(text);
        if (bilevel) s.bilevel = *bilevel;
        RunResult r;
        {
          py::gil_scoped_release nogil;
          r = run_scenario(s);
        }
        std::ostringstream os;
        write_trace_csv(os, r.trace);
        return py::make_tuple(summary_to_json(r.summary), os.str());
      },
      py::arg("scenario_json"), py::arg("bilevel") = py::none());
}
