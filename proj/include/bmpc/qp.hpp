#pragma once

// Convex QP solver (primal-dual interior point) and KKT-based sensitivities
// of the optimal cost with respect to problem data.
//
//   min  1/2 z'Qz + q'z   s.t.  Az = b,  Gz <= h

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "bmpc/error.hpp"

namespace bmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct QpProblem {
  SpMat Q;
  Vec q;
  SpMat A;
  Vec b;
  SpMat G;
  Vec h;

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_eq() const { return static_cast<int>(b.size()); }
  int num_ineq() const { return static_cast<int>(h.size()); }

  /// Throws Error(DimensionMismatch) on inconsistent block shapes or an
  /// asymmetric Q (relative asymmetry above 1e-12).
  void validate() const;

  double objective(const Vec& z) const;

  static QpProblem from_dense(const Mat& Q, const Vec& q, const Mat& A, const Vec& b,
                              const Mat& G, const Vec& h);
};

enum class QpStatus { Optimal, Infeasible, MaxIter, Degenerate };

const char* to_string(QpStatus status);

struct QpSolution {
  Vec z;
  Vec lambda;  // inequality multipliers, >= 0
  Vec nu;      // equality multipliers
  double J = 0.0;
  std::vector<int> active_set;
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double dual_residual = 0.0;
  double primal_residual = 0.0;
  double complementarity = 0.0;
  // Diagonal shift added to Q when it was not numerically positive definite.
  double regularization = 0.0;
};

struct QpSettings {
  double tol_kkt = 1e-9;
  int max_iter = 200;
  double tol_active = 1e-7;
  double psd_threshold = 1e-10;
  double psd_shift = 1e-8;
  // Re-solve on the identified active set after convergence.
  bool polish = true;
};

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings = {},
                    const QpSolution* warm_start = nullptr);

/// Derivatives of every QP block with respect to each scalar parameter.
struct ParamJacobians {
  int num_params = 0;
  std::vector<SpMat> dQ, dA, dG;
  std::vector<Vec> dq, db, dh;

  /// All-zero blocks shaped like `problem` for `c` parameters.
  static ParamJacobians zeros(const QpProblem& problem, int c);
  void check_shapes(const QpProblem& problem) const;
};

/// Gradient of the optimal cost with respect to every block of the data,
/// stored in factored form. dJ/dQ = sym(z_q_a z_q_b') etc.
struct CostDataGradient {
  // dJ/dQ = 1/2 (u v' + v u'), u = z, v = z - y_z
  Vec z;
  Vec y_z;
  Vec dq;  // dJ/dq
  // dJ/dA = -(nu y_z' + y_nu z')
  Vec nu;
  Vec y_nu;
  Vec db;  // dJ/db
  // dJ/dG = -(lambda y_z' + diag(lambda) y_lambda z')
  Vec lambda;
  Vec y_lambda;
  Vec dh;  // dJ/dh

  double dQ_entry(int i, int j) const;
  double dA_entry(int i, int j) const;
  double dG_entry(int i, int j) const;

  /// sum_ij (dJ/dw .* dw/dtheta_j) over all six blocks for parameter j.
  double contract(const ParamJacobians& jac, int j) const;
};

enum class DegenerateMode { Report, Perturb };

struct SensitivityOptions {
  double tol_strict = 1e-7;
  DegenerateMode degenerate_mode = DegenerateMode::Report;
  bool want_dz = false;
  // Settings used if the Perturb mode has to re-solve.
  QpSettings qp_settings{};
};

enum class GradientPath {
  Forward,  // implicit dz/dtheta per parameter, then chain rule
  Adjoint,  // one adjoint solve, contraction of dJ/dw with dw/dtheta
};

struct SensitivityResult {
  Vec dJ_dtheta;
  std::optional<Mat> dz_dtheta;
  double conditioning = 0.0;  // reciprocal 1-norm condition estimate
  std::vector<int> degenerate_indices;
  int factorizations = 0;
  std::optional<CostDataGradient> data_gradient;
};

/// Indices violating strict complementarity: multiplier and slack both
/// below `tol_strict`.
std::vector<int> degenerate_constraints(const QpProblem& problem, const QpSolution& solution,
                                        double tol_strict);

SensitivityResult differentiate_cost(const QpProblem& problem, const QpSolution& solution,
                                     const ParamJacobians& jac,
                                     const SensitivityOptions& options = {},
                                     GradientPath path = GradientPath::Adjoint);

/// Both gradient routes from a single factorization; used for cross-checks.
struct DualPathGradient {
  Vec forward;
  Vec adjoint;
  int factorizations = 0;
};
DualPathGradient differentiate_cost_both(const QpProblem& problem, const QpSolution& solution,
                                         const ParamJacobians& jac,
                                         const SensitivityOptions& options = {});

/// Polytope {p | A_ineq p <= b_ineq, A_eq p = b_eq}.
struct Polytope {
  Mat A_ineq;
  Vec b_ineq;
  Mat A_eq;
  Vec b_eq;
};

/// min c'p over the polytope; ties resolve to the minimum-norm optimum.
Vec solve_lp(const Vec& objective, const Polytope& polytope);

/// Dense row-major JSON dump with keys "Q","q","A","b","G","h".
std::string qp_to_json(const QpProblem& problem);
QpProblem qp_from_json(const std::string& text);

}  // namespace bmpc
