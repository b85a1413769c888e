#pragma once

// Single-rigid-body quadruped: one mass with fixed inertia pushed by four
// point feet. Tangent layout is (r, l, delta, Izeta), 12 entries, where the
// orientation perturbation is xi * exp(delta / 2).

#include <array>
#include <functional>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace bmpc {

inline constexpr int kLegs = 4;
inline constexpr int kStateDim = 12;
inline constexpr int kInputDim = 6 * kLegs;  // forces F_0..F_3 then feet e_0..e_3

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec12 = Eigen::Matrix<double, kStateDim, 1>;
using Mat12 = Eigen::Matrix<double, kStateDim, kStateDim>;
using MatB = Eigen::Matrix<double, kStateDim, kInputDim>;
using VecU = Eigen::Matrix<double, kInputDim, 1>;
using Quat = Eigen::Quaterniond;

// Kinematic box for a foot, relative to CoM + hip offset (world axes).
struct LegBox {
  Vec3 lo = Vec3(-0.15, -0.12, -0.45);
  Vec3 hi = Vec3(0.15, 0.12, -0.15);
};

struct SrbParams {
  double m = 13.0;
  Mat3 I_R = Eigen::Vector3d(0.07, 0.26, 0.24).asDiagonal();
  Vec3 g = Vec3(0.0, 0.0, -9.81);  // acceleration, l_dot gets m * g
  double mu = 0.7;
  double F_b = 250.0;
  // nominal foot offsets from the CoM in the ground plane (FL, FR, HL, HR)
  std::array<Vec3, kLegs> hip_offset = {Vec3(0.19, 0.11, 0.0), Vec3(0.19, -0.11, 0.0),
                                        Vec3(-0.19, 0.11, 0.0), Vec3(-0.19, -0.11, 0.0)};
  std::array<LegBox, kLegs> leg_box{};

  /// Throws ScenarioInvalid when m, mu, F_b or I_R are not physical.
  void validate() const;
};

struct SrbState {
  Vec3 r = Vec3::Zero();
  Vec3 l = Vec3::Zero();
  Quat xi = Quat::Identity();
  Vec3 Izeta = Vec3::Zero();
};

struct SrbInput {
  std::array<Vec3, kLegs> F{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::array<Vec3, kLegs> e{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  Vec3 external = Vec3::Zero();  // disturbance force at the CoM

  VecU stacked() const;
  static SrbInput from_stacked(const VecU& u);
};

Mat3 skew(const Vec3& v);
Quat quat_exp(const Vec3& delta);  // exp(delta / 2) as a unit quaternion
Vec3 quat_log(const Quat& q);      // inverse of quat_exp

/// a (+) dx on the tangent.
SrbState retract(const SrbState& a, const Vec12& dx);
/// b (-) a, so that retract(a, difference(b, a)) == b.
Vec12 difference(const SrbState& b, const SrbState& a);

Vec12 dynamics(const SrbState& x, const SrbInput& u, const SrbParams& p);

struct Linearization {
  Mat12 A = Mat12::Zero();
  MatB B = MatB::Zero();
  Vec12 f = Vec12::Zero();  // dynamics at the linearization point
};

Linearization linearize(const SrbState& x, const SrbInput& u, const SrbParams& p);

using InputProvider = std::function<SrbInput(double t)>;

/// One RK4 step on the tangent with exponential-map retraction at each stage.
SrbState integrate(const SrbState& x, const InputProvider& u, double t, double dt,
                   const SrbParams& p);
SrbState integrate(const SrbState& x, const SrbInput& u, double dt, const SrbParams& p);

double kinetic_energy(const SrbState& x, const SrbParams& p);

}  // namespace bmpc
