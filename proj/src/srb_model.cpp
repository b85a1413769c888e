#include "bmpc/srb_model.hpp"

#include <cmath>

#include "bmpc/error.hpp"

namespace bmpc {

void SrbParams::validate() const {
  if (!(m > 0.0)) throw Error(ErrorCode::ScenarioInvalid, "mass must be positive");
  if (!(mu > 0.0)) throw Error(ErrorCode::ScenarioInvalid, "friction coefficient must be positive");
  if (!(F_b > 0.0)) throw Error(ErrorCode::ScenarioInvalid, "F_b must be positive");
  if ((I_R - I_R.transpose()).norm() > 1e-12 * I_R.norm())
    throw Error(ErrorCode::ScenarioInvalid, "inertia not symmetric");
  if (Eigen::LLT<Mat3>(I_R).info() != Eigen::Success)
    throw Error(ErrorCode::ScenarioInvalid, "inertia not positive definite");
  for (const auto& b : leg_box)
    if ((b.lo.array() > b.hi.array()).any())
      throw Error(ErrorCode::ScenarioInvalid, "leg box lower corner above upper corner");
}

VecU SrbInput::stacked() const {
  VecU u;
  for (int i = 0; i < kLegs; ++i) {
    u.segment<3>(3 * i) = F[i];
    u.segment<3>(3 * kLegs + 3 * i) = e[i];
  }
  return u;
}

SrbInput SrbInput::from_stacked(const VecU& u) {
  SrbInput in;
  for (int i = 0; i < kLegs; ++i) {
    in.F[i] = u.segment<3>(3 * i);
    in.e[i] = u.segment<3>(3 * kLegs + 3 * i);
  }
  return in;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

Quat quat_exp(const Vec3& delta) {
  const double a = 0.5 * delta.norm();
  if (a < 1e-12) return Quat(1.0, 0.5 * delta.x(), 0.5 * delta.y(), 0.5 * delta.z()).normalized();
  const Vec3 v = std::sin(a) / (2.0 * a) * delta;
  return Quat(std::cos(a), v.x(), v.y(), v.z());
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  return 2.0 * std::atan2(s, q.w()) / s * v;
}

SrbState retract(const SrbState& a, const Vec12& dx) {
  SrbState b;
  b.r = a.r + dx.segment<3>(0);
  b.l = a.l + dx.segment<3>(3);
  b.xi = (a.xi * quat_exp(dx.segment<3>(6))).normalized();
  b.Izeta = a.Izeta + dx.segment<3>(9);
  return b;
}

Vec12 difference(const SrbState& b, const SrbState& a) {
  Vec12 d;
  d << b.r - a.r, b.l - a.l, quat_log(a.xi.conjugate() * b.xi), b.Izeta - a.Izeta;
  return d;
}

Vec12 dynamics(const SrbState& x, const SrbInput& u, const SrbParams& p) {
  const Vec3 zeta = p.I_R.ldlt().solve(x.Izeta);
  Vec3 force = p.m * p.g + u.external;
  Vec3 torque = -zeta.cross(x.Izeta);
  for (int i = 0; i < kLegs; ++i) {
    force += u.F[i];
    torque += (u.e[i] - x.r).cross(u.F[i]);
  }
  Vec12 xd;
  xd << x.l / p.m, force, zeta, torque;
  return xd;
}

Linearization linearize(const SrbState& x, const SrbInput& u, const SrbParams& p) {
  Linearization lin;
  const Mat3 Iinv = p.I_R.inverse();
  const Vec3 zeta = Iinv * x.Izeta;
  lin.A.block<3, 3>(0, 3) = Mat3::Identity() / p.m;
  lin.A.block<3, 3>(6, 9) = Iinv;
  lin.A.block<3, 3>(9, 9) = skew(x.Izeta) * Iinv - skew(zeta);
  for (int i = 0; i < kLegs; ++i) {
    lin.A.block<3, 3>(9, 0) += skew(u.F[i]);
    lin.B.block<3, 3>(3, 3 * i) = Mat3::Identity();
    lin.B.block<3, 3>(9, 3 * i) = skew(u.e[i] - x.r);
    lin.B.block<3, 3>(9, 3 * kLegs + 3 * i) = -skew(u.F[i]);
  }
  lin.f = dynamics(x, u, p);
  return lin;
}

SrbState integrate(const SrbState& x, const InputProvider& u, double t, double dt,
                   const SrbParams& p) {
  const SrbInput u0 = u(t), um = u(t + 0.5 * dt), u1 = u(t + dt);
  const Vec12 k1 = dynamics(x, u0, p);
  const Vec12 k2 = dynamics(retract(x, 0.5 * dt * k1), um, p);
  const Vec12 k3 = dynamics(retract(x, 0.5 * dt * k2), um, p);
  const Vec12 k4 = dynamics(retract(x, dt * k3), u1, p);
  return retract(x, dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

SrbState integrate(const SrbState& x, const SrbInput& u, double dt, const SrbParams& p) {
  return integrate(x, [&u](double) { return u; }, 0.0, dt, p);
}

double kinetic_energy(const SrbState& x, const SrbParams& p) {
  const Vec3 zeta = p.I_R.ldlt().solve(x.Izeta);
  return 0.5 * x.l.squaredNorm() / p.m + 0.5 * zeta.dot(x.Izeta);
}

}  // namespace bmpc
