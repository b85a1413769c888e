#pragma once

// Test-only oracles for QP solutions: random instance generators with a
// planted KKT point and brute-force active-set enumeration.

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bmpc/qp.hpp"

namespace bmpc::testing {

struct DenseQp {
  Mat Q;
  Vec q;
  Mat A;
  Vec b;
  Mat G;
  Vec h;

  QpProblem sparse() const { return QpProblem::from_dense(Q, q, A, b, G, h); }
};

inline Mat random_mat(std::mt19937& rng, int r, int c) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

inline Vec random_vec(std::mt19937& rng, int n) { return random_mat(rng, n, 1).col(0); }

/// Strictly convex QP (Q = M'M + I) with a planted, strictly complementary
/// KKT point. Active multipliers and inactive slacks are bounded away from 0.
inline DenseQp planted_qp(std::mt19937& rng, int n, int me, int mi, int n_active) {
  std::uniform_real_distribution<double> margin(0.5, 2.0);
  DenseQp p;
  const Mat M = random_mat(rng, n, n);
  p.Q = M.transpose() * M + Mat::Identity(n, n);
  p.A = random_mat(rng, me, n);
  p.G = random_mat(rng, mi, n);
  const Vec z = random_vec(rng, n);
  const Vec nu = random_vec(rng, me);
  Vec lam = Vec::Zero(mi);
  p.h = p.G * z;
  for (int i = 0; i < mi; ++i) {
    if (i < n_active)
      lam[i] = margin(rng);
    else
      p.h[i] += margin(rng);
  }
  p.b = p.A * z;
  p.q = -(p.Q * z + p.A.transpose() * nu + p.G.transpose() * lam);
  return p;
}

/// Enumerates every active set, solves the equality-constrained KKT system
/// and keeps the best primal/dual feasible point. Exponential; m <= ~12.
inline std::optional<double> brute_force_objective(const DenseQp& p, Vec* z_out = nullptr) {
  const int n = static_cast<int>(p.q.size());
  const int me = static_cast<int>(p.b.size());
  const int mi = static_cast<int>(p.h.size());
  std::optional<double> best;
  for (unsigned mask = 0; mask < (1u << mi); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < mi; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const int na = static_cast<int>(act.size());
    if (me + na > n) continue;
    const int dim = n + me + na;
    Mat K = Mat::Zero(dim, dim);
    Vec rhs(dim);
    K.topLeftCorner(n, n) = p.Q;
    K.block(0, n, n, me) = p.A.transpose();
    K.block(n, 0, me, n) = p.A;
    rhs.head(n) = -p.q;
    rhs.segment(n, me) = p.b;
    for (int a = 0; a < na; ++a) {
      K.block(0, n + me + a, n, 1) = p.G.row(act[a]).transpose();
      K.block(n + me + a, 0, 1, n) = p.G.row(act[a]);
      rhs[n + me + a] = p.h[act[a]];
    }
    Eigen::FullPivLU<Mat> lu(K);
    if (!lu.isInvertible()) continue;
    const Vec x = lu.solve(rhs);
    const Vec z = x.head(n);
    bool ok = true;
    for (int a = 0; a < na; ++a) ok = ok && x[n + me + a] >= -1e-10;
    if (mi > 0) ok = ok && ((p.G * z - p.h).array() <= 1e-10).all();
    if (!ok) continue;
    const double J = 0.5 * z.dot(p.Q * z) + p.q.dot(z);
    if (!best || J < *best) {
      best = J;
      if (z_out) *z_out = z;
    }
  }
  return best;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

}  // namespace bmpc::testing
