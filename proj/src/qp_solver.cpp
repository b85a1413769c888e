#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SparseCholesky>

#include "bmpc/qp.hpp"

namespace bmpc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::SingularKkt: return "SingularKkt";
    case ErrorCode::LpInfeasible: return "LpInfeasible";
    case ErrorCode::LpUnbounded: return "LpUnbounded";
    case ErrorCode::NonpositiveDuration: return "NonpositiveDuration";
    case ErrorCode::OutOfHorizon: return "OutOfHorizon";
    case ErrorCode::PolytopeViolation: return "PolytopeViolation";
    case ErrorCode::BarrierDomain: return "BarrierDomain";
    case ErrorCode::ScenarioInvalid: return "ScenarioInvalid";
    case ErrorCode::SolverFailure: return "SolverFailure";
  }
  return "Unknown";
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::MaxIter: return "MaxIter";
    case QpStatus::Degenerate: return "Degenerate";
  }
  return "Unknown";
}

void QpProblem::validate() const {
  const auto n = q.size();
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::DimensionMismatch, msg); };
  if (Q.rows() != n || Q.cols() != n) fail("Q must be n x n");
  if (A.rows() != b.size()) fail("A rows must match b");
  if (G.rows() != h.size()) fail("G rows must match h");
  if (A.cols() != n) fail("A columns must equal n");
  if (G.cols() != n) fail("G columns must equal n");
  const SpMat asym = SpMat(Q - SpMat(Q.transpose()));
  const double scale = std::max(1.0, Q.norm());
  if (asym.norm() > 1e-12 * scale) fail("Q is not symmetric");
}

double QpProblem::objective(const Vec& z) const { return 0.5 * z.dot(Q * z) + q.dot(z); }

QpProblem QpProblem::from_dense(const Mat& Q, const Vec& q, const Mat& A, const Vec& b,
                                const Mat& G, const Vec& h) {
  QpProblem p;
  const auto n = q.size();
  p.Q = Q.sparseView();
  p.q = q;
  p.A = (A.size() == 0 ? Mat(0, n) : A).sparseView();
  p.b = b;
  p.G = (G.size() == 0 ? Mat(0, n) : G).sparseView();
  p.h = h;
  return p;
}

namespace {

// Q is treated as positive definite when an LLT of Q - threshold*I succeeds.
bool needs_regularization(const SpMat& Q, double threshold) {
  if (Q.rows() == 0) return false;
  SpMat shifted = Q;
  for (int i = 0; i < Q.rows(); ++i) shifted.coeffRef(i, i) -= threshold;
  Eigen::SimplicialLLT<SpMat> llt(shifted);
  return llt.info() != Eigen::Success;
}

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

// Largest step in (0, 1] keeping v + a dv >= 0.
double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  }
  return a;
}

class InteriorPoint {
 public:
  InteriorPoint(const QpProblem& p, const SpMat& Q, const QpSettings& s)
      : p_(p), Q_(Q), s_(s), n_(p.num_vars()), me_(p.num_eq()), mi_(p.num_ineq()) {
    Gt_ = p_.G.transpose();
    At_ = p_.A.transpose();
  }

  QpSolution run(const QpSolution* warm) {
    initialize(warm);
    QpSolution out;
    for (int it = 0; it <= s_.max_iter; ++it) {
      residuals();
      out.iterations = it;
      if (converged()) {
        out.status = QpStatus::Optimal;
        break;
      }
      if (certify_infeasible()) {
        out.status = QpStatus::Infeasible;
        break;
      }
      if (it == s_.max_iter) {
        out.status = QpStatus::MaxIter;
        break;
      }
      if (!step()) {
        out.status = QpStatus::MaxIter;
        break;
      }
    }
    out.z = z_;
    out.lambda = lam_;
    out.nu = nu_;
    out.J = 0.5 * z_.dot(Q_ * z_) + p_.q.dot(z_);
    out.dual_residual = inf_norm(rd_);
    out.primal_residual = std::max(inf_norm(re_), inf_norm(ri_));
    out.complementarity = complementarity();
    return out;
  }

 private:
  static constexpr double kPrimalReg = 1e-11;
  static constexpr double kDualReg = 1e-11;

  void initialize(const QpSolution* warm) {
    z_ = Vec::Zero(n_);
    nu_ = Vec::Zero(me_);
    lam_ = Vec::Ones(mi_);
    s_v_ = Vec::Ones(mi_);
    if (warm != nullptr && warm->z.size() == n_ && warm->nu.size() == me_ &&
        warm->lambda.size() == mi_) {
      z_ = warm->z;
      nu_ = warm->nu;
      s_v_ = (p_.h - p_.G * z_).cwiseMax(1.0);
      lam_ = warm->lambda.cwiseMax(1.0);
      return;
    }
    // Least-squares start: min 1/2 z'Qz + q'z + 1/2 |Gz - h|^2 s.t. Az = b.
    Vec w = Vec::Ones(mi_);
    factor(w);
    Vec rhs1 = -p_.q + Gt_ * p_.h;
    Vec rhs2 = p_.b;
    Vec dz, dnu;
    solve_kkt(w, rhs1, rhs2, dz, dnu);
    z_ = dz;
    nu_ = dnu;
    if (mi_ == 0) return;
    Vec s = p_.h - p_.G * z_;
    Vec lam = -s;
    const double ap = -s.minCoeff();
    if (ap >= 0.0) s.array() += 1.0 + ap;
    const double ad = -lam.minCoeff();
    if (ad >= 0.0) lam.array() += 1.0 + ad;
    s_v_ = s;
    lam_ = lam;
  }

  void residuals() {
    rd_ = Q_ * z_ + p_.q + At_ * nu_ + Gt_ * lam_;
    re_ = p_.A * z_ - p_.b;
    ri_ = p_.G * z_ + s_v_ - p_.h;
  }

  double complementarity() const {
    if (mi_ == 0) return 0.0;
    // |lambda_i (Gz - h)_i| with Gz - h = ri - s
    return (lam_.array() * (ri_ - s_v_).array()).abs().maxCoeff();
  }

  bool converged() const {
    const double tol = s_.tol_kkt;
    if (inf_norm(rd_) > tol || inf_norm(re_) > tol || inf_norm(ri_) > tol) return false;
    if (mi_ == 0) return true;
    return (s_v_.array() * lam_.array()).maxCoeff() <= tol && complementarity() <= tol;
  }

  // Farkas certificate: A'nu + G'lam ~ 0 with b'nu + h'lam < 0, lam >= 0.
  bool certify_infeasible() const {
    const double scale = std::max(inf_norm(nu_), inf_norm(lam_));
    if (scale < 1e6) return false;
    const Vec ray = At_ * nu_ + Gt_ * lam_;
    const double gap = p_.b.dot(nu_) + p_.h.dot(lam_);
    return inf_norm(ray) <= 1e-6 * scale && gap < -1e-6 * scale;
  }

  void factor(const Vec& w) {
    SpMat H = Q_;
    if (mi_ > 0) H += SpMat(Gt_ * w.asDiagonal() * p_.G);
    std::vector<Triplet> trip;
    trip.reserve(H.nonZeros() + 2 * p_.A.nonZeros() + n_ + me_);
    for (int k = 0; k < H.outerSize(); ++k)
      for (SpMat::InnerIterator itH(H, k); itH; ++itH)
        trip.emplace_back(itH.row(), itH.col(), itH.value());
    for (int k = 0; k < p_.A.outerSize(); ++k)
      for (SpMat::InnerIterator itA(p_.A, k); itA; ++itA) {
        trip.emplace_back(n_ + itA.row(), itA.col(), itA.value());
        trip.emplace_back(itA.col(), n_ + itA.row(), itA.value());
      }
    Kexact_.resize(n_ + me_, n_ + me_);
    Kexact_.setFromTriplets(trip.begin(), trip.end());
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, kPrimalReg);
    for (int i = 0; i < me_; ++i) trip.emplace_back(n_ + i, n_ + i, -kDualReg);
    SpMat K(n_ + me_, n_ + me_);
    K.setFromTriplets(trip.begin(), trip.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(K);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    factor_ok_ = ldlt_.info() == Eigen::Success;
    if (!factor_ok_) {
      lu_.compute(K);
      factor_ok_ = lu_.info() == Eigen::Success;
      use_lu_ = true;
    } else {
      use_lu_ = false;
    }
  }

  Vec kkt_solve(const Vec& rhs) {
    Vec x = use_lu_ ? Vec(lu_.solve(rhs)) : Vec(ldlt_.solve(rhs));
    for (int r = 0; r < 3; ++r) {
      const Vec res = rhs - Kexact_ * x;
      if (inf_norm(res) <= 1e-14 * std::max(1.0, inf_norm(rhs))) break;
      x += use_lu_ ? Vec(lu_.solve(res)) : Vec(ldlt_.solve(res));
    }
    return x;
  }

  void solve_kkt(const Vec& /*w*/, const Vec& rhs1, const Vec& rhs2, Vec& dz, Vec& dnu) {
    Vec rhs(n_ + me_);
    rhs << rhs1, rhs2;
    const Vec x = kkt_solve(rhs);
    dz = x.head(n_);
    dnu = x.tail(me_);
  }

  // Solves the linearized KKT system for complementarity target rc.
  void newton(const Vec& w, const Vec& rc, Vec& dz, Vec& dnu, Vec& dlam, Vec& ds) {
    Vec t(mi_);
    if (mi_ > 0) t = (-rc.array() + lam_.array() * ri_.array()) / s_v_.array();
    Vec rhs1 = -rd_;
    if (mi_ > 0) rhs1 -= Gt_ * t;
    solve_kkt(w, rhs1, -re_, dz, dnu);
    if (mi_ > 0) {
      const Vec gdz = p_.G * dz;
      dlam = t + w.cwiseProduct(gdz);
      ds = -ri_ - gdz;
    } else {
      dlam.resize(0);
      ds.resize(0);
    }
  }

  bool step() {
    Vec w = mi_ > 0 ? Vec(lam_.cwiseQuotient(s_v_)) : Vec(0);
    factor(w);
    if (!factor_ok_) return false;

    Vec dz, dnu, dlam, ds;
    if (mi_ == 0) {
      newton(w, Vec(0), dz, dnu, dlam, ds);
      z_ += dz;
      nu_ += dnu;
      return true;
    }
    const double mu = s_v_.dot(lam_) / mi_;
    // predictor
    Vec rc = s_v_.cwiseProduct(lam_);
    newton(w, rc, dz, dnu, dlam, ds);
    const double a_aff = std::min(max_step(s_v_, ds), max_step(lam_, dlam));
    const double mu_aff =
        (s_v_ + a_aff * ds).dot(lam_ + a_aff * dlam) / static_cast<double>(mi_);
    const double sigma = std::pow(mu_aff / mu, 3);
    // corrector
    rc += ds.cwiseProduct(dlam);
    rc.array() -= sigma * mu;
    newton(w, rc, dz, dnu, dlam, ds);
    const double a = std::min(1.0, 0.99 * std::min(max_step(s_v_, ds), max_step(lam_, dlam)));
    z_ += a * dz;
    nu_ += a * dnu;
    lam_ += a * dlam;
    s_v_ += a * ds;
    return std::isfinite(z_.sum());
  }

  const QpProblem& p_;
  const SpMat& Q_;
  const QpSettings& s_;
  const int n_, me_, mi_;
  SpMat Gt_, At_;
  Vec z_, nu_, lam_, s_v_;
  Vec rd_, re_, ri_;
  SpMat Kexact_;
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  Eigen::SparseLU<SpMat> lu_;
  bool analyzed_ = false;
  bool factor_ok_ = false;
  bool use_lu_ = false;
};

// Re-solves the equality-constrained KKT system on the identified active set.
// Accepted only if the result is primal/dual feasible and at least as
// accurate as the interior-point iterate.
void polish(const QpProblem& p, const SpMat& Q, const QpSettings& s, QpSolution& sol) {
  const int n = p.num_vars(), me = p.num_eq(), mi = p.num_ineq();
  const Vec slack = p.h - p.G * sol.z;
  std::vector<int> act;
  for (int i = 0; i < mi; ++i)
    if (slack[i] <= sol.lambda[i]) act.push_back(static_cast<int>(i));
  const int na = static_cast<int>(act.size());
  const int dim = n + me + na;
  std::vector<Triplet> trip;
  for (int k = 0; k < Q.outerSize(); ++k)
    for (SpMat::InnerIterator it(Q, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  for (int k = 0; k < p.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.A, k); it; ++it) {
      trip.emplace_back(n + it.row(), it.col(), it.value());
      trip.emplace_back(it.col(), n + it.row(), it.value());
    }
  std::vector<int> row_of(mi, -1);
  for (int a = 0; a < na; ++a) row_of[act[a]] = a;
  for (int k = 0; k < p.G.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.G, k); it; ++it) {
      const int a = row_of[it.row()];
      if (a < 0) continue;
      trip.emplace_back(n + me + a, it.col(), it.value());
      trip.emplace_back(it.col(), n + me + a, it.value());
    }
  SpMat K(dim, dim);
  K.setFromTriplets(trip.begin(), trip.end());
  SpMat Kreg = K;
  for (int i = n; i < dim; ++i) Kreg.coeffRef(i, i) -= 1e-12;
  Eigen::SimplicialLDLT<SpMat> ldlt(Kreg);
  if (ldlt.info() != Eigen::Success) return;
  Vec rhs(dim);
  rhs.head(n) = -p.q;
  rhs.segment(n, me) = p.b;
  for (int a = 0; a < na; ++a) rhs[n + me + a] = p.h[act[a]];
  Vec x = ldlt.solve(rhs);
  for (int r = 0; r < 3; ++r) x += ldlt.solve(Vec(rhs - K * x));
  if (!x.allFinite()) return;

  QpSolution cand = sol;
  cand.z = x.head(n);
  cand.nu = x.segment(n, me);
  cand.lambda = Vec::Zero(mi);
  for (int a = 0; a < na; ++a) cand.lambda[act[a]] = x[n + me + a];
  if (mi > 0 && cand.lambda.minCoeff() < -s.tol_kkt) return;
  const Vec gap = p.G * cand.z - p.h;
  if (mi > 0 && gap.maxCoeff() > s.tol_kkt) return;
  const Vec rd = Q * cand.z + p.q + p.A.transpose() * cand.nu + p.G.transpose() * cand.lambda;
  const Vec re = p.A * cand.z - p.b;
  cand.lambda = cand.lambda.cwiseMax(0.0);
  cand.dual_residual = inf_norm(rd);
  cand.primal_residual = std::max(inf_norm(re), mi > 0 ? std::max(0.0, gap.maxCoeff()) : 0.0);
  cand.complementarity = mi > 0 ? (cand.lambda.array() * gap.array()).abs().maxCoeff() : 0.0;
  const double tol = s.tol_kkt;
  const bool ok = cand.dual_residual <= tol && cand.primal_residual <= tol &&
                  cand.complementarity <= tol;
  const bool better = cand.dual_residual <= std::max(sol.dual_residual, tol) &&
                      cand.primal_residual <= std::max(sol.primal_residual, tol);
  if (!ok || !better) return;
  cand.status = QpStatus::Optimal;
  cand.J = 0.5 * cand.z.dot(Q * cand.z) + p.q.dot(cand.z);
  sol = std::move(cand);
}

}  // namespace

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings,
                    const QpSolution* warm_start) {
  problem.validate();
  SpMat Q = problem.Q;
  double reg = 0.0;
  if (needs_regularization(Q, settings.psd_threshold)) {
    reg = settings.psd_shift;
    for (int i = 0; i < Q.rows(); ++i) Q.coeffRef(i, i) += reg;
  }
  InteriorPoint ip(problem, Q, settings);
  QpSolution sol = ip.run(warm_start);
  sol.regularization = reg;
  const bool near = sol.status == QpStatus::MaxIter && sol.dual_residual < 1e-5 &&
                    sol.primal_residual < 1e-5 && sol.complementarity < 1e-5;
  if (settings.polish && (sol.status == QpStatus::Optimal || near)) polish(problem, Q, settings, sol);
  if (problem.num_ineq() > 0) {
    const Vec gap = problem.G * sol.z - problem.h;
    for (int i = 0; i < gap.size(); ++i)
      if (gap[i] >= -settings.tol_active) sol.active_set.push_back(i);
  }
  return sol;
}

}  // namespace bmpc
