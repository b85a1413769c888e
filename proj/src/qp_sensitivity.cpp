#include <algorithm>
#include <cmath>

#include <Eigen/SparseLU>

#include "bmpc/qp.hpp"

namespace bmpc {

ParamJacobians ParamJacobians::zeros(const QpProblem& problem, int c) {
  ParamJacobians jac;
  jac.num_params = c;
  const int n = problem.num_vars(), me = problem.num_eq(), mi = problem.num_ineq();
  for (int j = 0; j < c; ++j) {
    jac.dQ.emplace_back(n, n);
    jac.dA.emplace_back(me, n);
    jac.dG.emplace_back(mi, n);
    jac.dq.push_back(Vec::Zero(n));
    jac.db.push_back(Vec::Zero(me));
    jac.dh.push_back(Vec::Zero(mi));
  }
  return jac;
}

void ParamJacobians::check_shapes(const QpProblem& p) const {
  const auto c = static_cast<std::size_t>(num_params);
  if (dQ.size() != c || dA.size() != c || dG.size() != c || dq.size() != c || db.size() != c ||
      dh.size() != c)
    throw Error(ErrorCode::DimensionMismatch, "ParamJacobians block count != num_params");
  for (std::size_t j = 0; j < c; ++j) {
    const bool ok = dQ[j].rows() == p.Q.rows() && dQ[j].cols() == p.Q.cols() &&
                    dA[j].rows() == p.A.rows() && dA[j].cols() == p.A.cols() &&
                    dG[j].rows() == p.G.rows() && dG[j].cols() == p.G.cols() &&
                    dq[j].size() == p.q.size() && db[j].size() == p.b.size() &&
                    dh[j].size() == p.h.size();
    if (!ok) throw Error(ErrorCode::DimensionMismatch, "ParamJacobians block shape mismatch");
  }
}

double CostDataGradient::dQ_entry(int i, int j) const {
  const Vec& u = z;
  return 0.5 * u[i] * u[j] - 0.5 * (y_z[i] * u[j] + u[i] * y_z[j]);
}

double CostDataGradient::dA_entry(int i, int j) const {
  return -(nu[i] * y_z[j] + y_nu[i] * z[j]);
}

double CostDataGradient::dG_entry(int i, int j) const {
  return -(lambda[i] * y_z[j] + lambda[i] * y_lambda[i] * z[j]);
}

double CostDataGradient::contract(const ParamJacobians& jac, int j) const {
  double acc = 0.0;
  const SpMat& dQ = jac.dQ[j];
  for (int k = 0; k < dQ.outerSize(); ++k)
    for (SpMat::InnerIterator it(dQ, k); it; ++it)
      acc += dQ_entry(static_cast<int>(it.row()), static_cast<int>(it.col())) * it.value();
  const SpMat& dA = jac.dA[j];
  for (int k = 0; k < dA.outerSize(); ++k)
    for (SpMat::InnerIterator it(dA, k); it; ++it)
      acc += dA_entry(static_cast<int>(it.row()), static_cast<int>(it.col())) * it.value();
  const SpMat& dG = jac.dG[j];
  for (int k = 0; k < dG.outerSize(); ++k)
    for (SpMat::InnerIterator it(dG, k); it; ++it)
      acc += dG_entry(static_cast<int>(it.row()), static_cast<int>(it.col())) * it.value();
  acc += dq.dot(jac.dq[j]) + db.dot(jac.db[j]) + dh.dot(jac.dh[j]);
  return acc;
}

std::vector<int> degenerate_constraints(const QpProblem& problem, const QpSolution& solution,
                                        double tol_strict) {
  std::vector<int> out;
  if (problem.num_ineq() == 0) return out;
  const Vec slack = problem.h - problem.G * solution.z;
  for (int i = 0; i < slack.size(); ++i)
    if (std::abs(solution.lambda[i]) <= tol_strict && std::abs(slack[i]) <= tol_strict)
      out.push_back(i);
  return out;
}

namespace {

// Factored implicit-function matrix
//   [ Q            G'          A' ]
//   [ diag(l) G    diag(Gz-h)  0  ]
//   [ A            0           0  ]
class KktDerivative {
 public:
  KktDerivative(const QpProblem& p, const QpSolution& sol, const SpMat& Q)
      : n_(p.num_vars()), mi_(p.num_ineq()), me_(p.num_eq()) {
    const int dim = n_ + mi_ + me_;
    const Vec gap = p.G * sol.z - p.h;
    std::vector<Triplet> trip;
    trip.reserve(Q.nonZeros() + 2 * p.G.nonZeros() + 2 * p.A.nonZeros() + mi_);
    for (int k = 0; k < Q.outerSize(); ++k)
      for (SpMat::InnerIterator it(Q, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < p.G.outerSize(); ++k)
      for (SpMat::InnerIterator it(p.G, k); it; ++it) {
        trip.emplace_back(it.col(), n_ + it.row(), it.value());
        trip.emplace_back(n_ + it.row(), it.col(), sol.lambda[it.row()] * it.value());
      }
    for (int i = 0; i < mi_; ++i) trip.emplace_back(n_ + i, n_ + i, gap[i]);
    for (int k = 0; k < p.A.outerSize(); ++k)
      for (SpMat::InnerIterator it(p.A, k); it; ++it) {
        trip.emplace_back(it.col(), n_ + mi_ + it.row(), it.value());
        trip.emplace_back(n_ + mi_ + it.row(), it.col(), it.value());
      }
    M_.resize(dim, dim);
    M_.setFromTriplets(trip.begin(), trip.end());
    M_.makeCompressed();
    lu_.analyzePattern(M_);
    lu_.factorize(M_);
    if (lu_.info() != Eigen::Success)
      throw Error(ErrorCode::SingularKkt, "LU factorization of the KKT derivative matrix failed");
  }

  Vec solve(const Vec& rhs) const {
    Vec x = lu_.solve(rhs);
    return x;
  }
  Vec solve_transposed(const Vec& rhs) {
    Vec x = lu_.transpose().solve(rhs);
    return x;
  }

  // Hager / Higham estimate of 1 / (|M|_1 |M^-1|_1).
  double rcond() {
    const int dim = static_cast<int>(M_.rows());
    if (dim == 0) return 1.0;
    double norm_m = 0.0;
    for (int k = 0; k < M_.outerSize(); ++k) {
      double col = 0.0;
      for (SpMat::InnerIterator it(M_, k); it; ++it) col += std::abs(it.value());
      norm_m = std::max(norm_m, col);
    }
    Vec x = Vec::Constant(dim, 1.0 / dim);
    double est = 0.0;
    for (int iter = 0; iter < 5; ++iter) {
      const Vec y = solve(x);
      if (!y.allFinite()) return 0.0;
      est = y.lpNorm<1>();
      const Vec xi = y.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
      const Vec zz = solve_transposed(xi);
      Eigen::Index j = 0;
      if (zz.cwiseAbs().maxCoeff(&j) <= zz.dot(x)) break;
      x.setZero();
      x[j] = 1.0;
    }
    if (est <= 0.0 || norm_m <= 0.0) return 0.0;
    return 1.0 / (norm_m * est);
  }

 private:
  int n_, mi_, me_;
  SpMat M_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu_;
};

SpMat effective_q(const QpProblem& p, const QpSolution& sol) {
  SpMat Q = p.Q;
  if (sol.regularization != 0.0)
    for (int i = 0; i < Q.rows(); ++i) Q.coeffRef(i, i) += sol.regularization;
  return Q;
}

// Right-hand side of the implicit-function system for parameter j.
Vec implicit_rhs(const QpProblem& p, const QpSolution& s, const ParamJacobians& jac, int j) {
  const int n = p.num_vars(), mi = p.num_ineq(), me = p.num_eq();
  Vec r(n + mi + me);
  r.head(n) = jac.dQ[j] * s.z + jac.dq[j] + jac.dG[j].transpose() * s.lambda +
              jac.dA[j].transpose() * s.nu;
  if (mi > 0) r.segment(n, mi) = s.lambda.cwiseProduct(jac.dG[j] * s.z - jac.dh[j]);
  if (me > 0) r.tail(me) = jac.dA[j] * s.z - jac.db[j];
  return r;
}

double explicit_term(const QpSolution& s, const ParamJacobians& jac, int j) {
  return 0.5 * s.z.dot(jac.dQ[j] * s.z) + jac.dq[j].dot(s.z);
}

struct Prepared {
  QpProblem problem;
  QpSolution solution;
  std::vector<int> degenerate;
};

Prepared prepare(const QpProblem& problem, const QpSolution& solution,
                 const SensitivityOptions& options) {
  if (solution.status != QpStatus::Optimal)
    throw Error(ErrorCode::Degenerate, "differentiation requires an Optimal solution");
  Prepared out{problem, solution, degenerate_constraints(problem, solution, options.tol_strict)};
  if (out.degenerate.empty()) return out;
  if (options.degenerate_mode == DegenerateMode::Report)
    throw Error(ErrorCode::Degenerate,
                std::to_string(out.degenerate.size()) + " constraint(s) lack strict complementarity");
  for (int i : out.degenerate) out.problem.h[i] += 1e-9;
  out.solution = solve_qp(out.problem, options.qp_settings, &solution);
  if (out.solution.status != QpStatus::Optimal)
    throw Error(ErrorCode::Degenerate, "perturbed re-solve did not converge");
  return out;
}

}  // namespace

SensitivityResult differentiate_cost(const QpProblem& problem, const QpSolution& solution,
                                     const ParamJacobians& jac, const SensitivityOptions& options,
                                     GradientPath path) {
  jac.check_shapes(problem);
  const Prepared prep = prepare(problem, solution, options);
  const QpProblem& p = prep.problem;
  const QpSolution& s = prep.solution;
  const SpMat Q = effective_q(p, s);
  const int n = p.num_vars(), mi = p.num_ineq(), me = p.num_eq();
  const int c = jac.num_params;

  SensitivityResult out;
  out.degenerate_indices = prep.degenerate;
  out.dJ_dtheta = Vec::Zero(c);
  KktDerivative kkt(p, s, Q);
  out.factorizations = 1;
  const Vec gz = Q * s.z + p.q;

  if (path == GradientPath::Forward || options.want_dz) {
    Mat dz(n, c);
    for (int j = 0; j < c; ++j) {
      dz.col(j) = -kkt.solve(implicit_rhs(p, s, jac, j)).head(n);
      if (path == GradientPath::Forward)
        out.dJ_dtheta[j] = gz.dot(dz.col(j)) + explicit_term(s, jac, j);
    }
    if (options.want_dz) out.dz_dtheta = std::move(dz);
  }
  if (path == GradientPath::Adjoint) {
    Vec rhs = Vec::Zero(n + mi + me);
    rhs.head(n) = gz;
    const Vec y = kkt.solve_transposed(rhs);
    CostDataGradient g;
    g.z = s.z;
    g.y_z = y.head(n);
    g.y_lambda = y.segment(n, mi);
    g.y_nu = y.tail(me);
    g.nu = s.nu;
    g.lambda = s.lambda;
    g.dq = s.z - g.y_z;
    g.db = g.y_nu;
    g.dh = s.lambda.cwiseProduct(g.y_lambda);
    for (int j = 0; j < c; ++j) out.dJ_dtheta[j] = g.contract(jac, j);
    out.data_gradient = std::move(g);
  }
  out.conditioning = kkt.rcond();
  if (!out.dJ_dtheta.allFinite())
    throw Error(ErrorCode::SingularKkt, "non-finite sensitivity");
  return out;
}

DualPathGradient differentiate_cost_both(const QpProblem& problem, const QpSolution& solution,
                                         const ParamJacobians& jac,
                                         const SensitivityOptions& options) {
  jac.check_shapes(problem);
  const Prepared prep = prepare(problem, solution, options);
  const QpProblem& p = prep.problem;
  const QpSolution& s = prep.solution;
  const SpMat Q = effective_q(p, s);
  const int n = p.num_vars(), mi = p.num_ineq(), me = p.num_eq();
  KktDerivative kkt(p, s, Q);
  DualPathGradient out;
  out.factorizations = 1;
  const Vec gz = Q * s.z + p.q;
  out.forward = Vec::Zero(jac.num_params);
  out.adjoint = Vec::Zero(jac.num_params);
  for (int j = 0; j < jac.num_params; ++j) {
    const Vec dz = -kkt.solve(implicit_rhs(p, s, jac, j)).head(n);
    out.forward[j] = gz.dot(dz) + explicit_term(s, jac, j);
  }
  Vec rhs = Vec::Zero(n + mi + me);
  rhs.head(n) = gz;
  const Vec y = kkt.solve_transposed(rhs);
  CostDataGradient g;
  g.z = s.z;
  g.y_z = y.head(n);
  g.y_lambda = y.segment(n, mi);
  g.y_nu = y.tail(me);
  g.nu = s.nu;
  g.lambda = s.lambda;
  g.dq = s.z - g.y_z;
  g.db = g.y_nu;
  g.dh = s.lambda.cwiseProduct(g.y_lambda);
  for (int j = 0; j < jac.num_params; ++j) out.adjoint[j] = g.contract(jac, j);
  return out;
}

}  // namespace bmpc
