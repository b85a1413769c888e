#include <cmath>

#include <json.hpp>

#include "bmpc/qp.hpp"

namespace bmpc {

namespace {
// Quadratic tie-break weight: the LP is solved as min c'p + kTieBreak |p|^2.
constexpr double kTieBreak = 1e-10;
constexpr double kUnboundedNorm = 1e6;
}  // namespace

Vec solve_lp(const Vec& objective, const Polytope& poly) {
  const auto n = objective.size();
  const Mat A_in = poly.A_ineq.size() == 0 ? Mat(0, n) : poly.A_ineq;
  const Mat A_eq = poly.A_eq.size() == 0 ? Mat(0, n) : poly.A_eq;
  if (A_in.cols() != n || A_eq.cols() != n || A_in.rows() != poly.b_ineq.size() ||
      A_eq.rows() != poly.b_eq.size())
    throw Error(ErrorCode::DimensionMismatch, "polytope does not match objective dimension");
  if (n == 0) return Vec(0);

  const Mat Q = 2.0 * kTieBreak * Mat::Identity(n, n);
  const QpProblem qp = QpProblem::from_dense(Q, objective, A_eq, poly.b_eq, A_in, poly.b_ineq);
  QpSettings settings;
  settings.tol_kkt = 1e-10;
  settings.max_iter = 400;
  const QpSolution sol = solve_qp(qp, settings);
  if (sol.status == QpStatus::Infeasible) throw Error(ErrorCode::LpInfeasible, "empty polytope");
  if (!sol.z.allFinite() || sol.z.lpNorm<Eigen::Infinity>() > kUnboundedNorm)
    throw Error(ErrorCode::LpUnbounded, "objective unbounded below on the polytope");
  if (sol.status != QpStatus::Optimal) {
    // Slow convergence on a feasible problem is reported as infeasible only
    // when the iterate is clearly outside the polytope.
    const double viol = std::max(
        A_in.rows() ? (A_in * sol.z - poly.b_ineq).maxCoeff() : 0.0,
        A_eq.rows() ? (A_eq * sol.z - poly.b_eq).lpNorm<Eigen::Infinity>() : 0.0);
    if (viol > 1e-6) throw Error(ErrorCode::LpInfeasible, "LP solve did not reach feasibility");
  }
  return sol.z;
}

namespace {

nlohmann::json dense_rows(const SpMat& m) {
  const Mat d(m);
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < d.cols(); ++j) row.push_back(d(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vec_json(const Vec& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Mat rows_to_mat(const nlohmann::json& j, Eigen::Index cols) {
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw Error(ErrorCode::DimensionMismatch, "ragged matrix in QP JSON");
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

Vec json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string qp_to_json(const QpProblem& p) {
  nlohmann::json j;
  j["Q"] = dense_rows(p.Q);
  j["q"] = vec_json(p.q);
  j["A"] = dense_rows(p.A);
  j["b"] = vec_json(p.b);
  j["G"] = dense_rows(p.G);
  j["h"] = vec_json(p.h);
  return j.dump();
}

QpProblem qp_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const Vec q = json_vec(j.at("q"));
  const auto n = q.size();
  QpProblem p = QpProblem::from_dense(rows_to_mat(j.at("Q"), n), q, rows_to_mat(j.at("A"), n),
                                      json_vec(j.at("b")), rows_to_mat(j.at("G"), n),
                                      json_vec(j.at("h")));
  p.validate();
  return p;
}

}  // namespace bmpc
