#pragma once

// Cubic Hermite splines joined end to end. Knots (value, derivative) are
// shared between neighbouring segments, so value and slope continuity hold
// by construction; zero-kind segments evaluate to 0 regardless of knots.

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "bmpc/error.hpp"

namespace bmpc {

enum class SegmentKind { Swing, Stance, ZeroForce, ConstantZero };

inline bool is_zero_kind(SegmentKind k) {
  return k == SegmentKind::ZeroForce || k == SegmentKind::ConstantZero;
}

struct HermiteSegment {
  double y0 = 0.0;
  double y1 = 0.0;
  double ydot0 = 0.0;
  double ydot1 = 0.0;
  double Ts = 1.0;
  SegmentKind kind = SegmentKind::Stance;
};

struct HermiteCoefficients {
  double a0, a1, a2, a3;
};

/// Polynomial coefficients of sigma(t) = a0 + a1 t + a2 t^2 + a3 t^3.
/// Throws NonpositiveDuration when Ts <= 0.
HermiteCoefficients coefficients(const HermiteSegment& seg);

/// Weights of (y0, ydot0, y1, ydot1) in sigma(tau) for a segment of length Ts.
std::array<double, 4> hermite_basis(double tau, double Ts);
/// d/dtau of hermite_basis.
std::array<double, 4> hermite_basis_dtau(double tau, double Ts);
/// d/dTs of hermite_basis at fixed local time tau.
std::array<double, 4> hermite_basis_dTs(double tau, double Ts);

struct Knot {
  double value = 0.0;
  double slope = 0.0;
};

/// Linear functional of the knot vector: value = sum_i w[i] * x[index[i]] where
/// x interleaves (value, slope) per knot: x[2k] = value_k, x[2k+1] = slope_k.
struct KnotWeights {
  std::size_t segment = 0;
  std::array<std::size_t, 4> index{};
  std::array<double, 4> w{};
};

class SplineTrajectory {
 public:
  SplineTrajectory() = default;
  /// knots.size() must equal durations.size() + 1 == kinds.size() + 1.
  SplineTrajectory(double t0, std::vector<Knot> knots, std::vector<double> durations,
                   std::vector<SegmentKind> kinds);

  double t0() const { return t0_; }
  double end_time() const { return ends_.empty() ? t0_ : ends_.back(); }
  double horizon() const { return end_time() - t0_; }
  std::size_t num_segments() const { return durations_.size(); }
  const std::vector<Knot>& knots() const { return knots_; }
  const std::vector<double>& durations() const { return durations_; }
  const std::vector<SegmentKind>& kinds() const { return kinds_; }
  double segment_start(std::size_t k) const { return k == 0 ? t0_ : ends_[k - 1]; }
  HermiteSegment segment(std::size_t k) const;

  /// Segment containing global time t: half-open [start, end), last one closed.
  std::size_t locate(double t) const;

  /// (value, time derivative) at global time t. Throws OutOfHorizon.
  std::pair<double, double> eval(double t) const;

  /// Total derivative of eval(t).first with respect to the duration of
  /// segment `seg` at fixed global time (later segments shift in time).
  double d_eval_d_duration(double t, std::size_t seg) const;

  KnotWeights weights(double t) const;
  KnotWeights d_weights_d_duration(double t, std::size_t seg) const;

  std::vector<std::pair<double, double>> sample(double dt) const;

 private:
  void check_time(double t) const;

  double t0_ = 0.0;
  std::vector<Knot> knots_;
  std::vector<double> durations_;
  std::vector<SegmentKind> kinds_;
  std::vector<double> ends_;
};

}  // namespace bmpc
