#include "bmpc/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bmpc {

namespace {
constexpr double kTimeSlack = 1e-9;

void require_positive(double Ts) {
  if (!(Ts > 0.0)) throw Error(ErrorCode::NonpositiveDuration, "segment duration " + std::to_string(Ts));
}
}  // namespace

HermiteCoefficients coefficients(const HermiteSegment& seg) {
  require_positive(seg.Ts);
  const double T = seg.Ts;
  const double dy = seg.y0 - seg.y1;
  return {seg.y0, seg.ydot0, -(3.0 * dy + T * (2.0 * seg.ydot0 + seg.ydot1)) / (T * T),
          (2.0 * dy + T * (seg.ydot0 + seg.ydot1)) / (T * T * T)};
}

std::array<double, 4> hermite_basis(double tau, double Ts) {
  const double s = tau / Ts, s2 = s * s, s3 = s2 * s;
  return {2 * s3 - 3 * s2 + 1, (s3 - 2 * s2 + s) * Ts, -2 * s3 + 3 * s2, (s3 - s2) * Ts};
}

std::array<double, 4> hermite_basis_dtau(double tau, double Ts) {
  const double s = tau / Ts, s2 = s * s;
  return {(6 * s2 - 6 * s) / Ts, 3 * s2 - 4 * s + 1, (-6 * s2 + 6 * s) / Ts, 3 * s2 - 2 * s};
}

std::array<double, 4> hermite_basis_dTs(double tau, double Ts) {
  // d s / d Ts = -s / Ts at fixed tau
  const double s = tau / Ts, s2 = s * s, s3 = s2 * s;
  const double h10 = s3 - 2 * s2 + s, h11 = s3 - s2;
  const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1, d01 = -6 * s2 + 6 * s,
               d11 = 3 * s2 - 2 * s;
  return {-d00 * s / Ts, h10 - s * d10, -d01 * s / Ts, h11 - s * d11};
}

SplineTrajectory::SplineTrajectory(double t0, std::vector<Knot> knots,
                                   std::vector<double> durations, std::vector<SegmentKind> kinds)
    : t0_(t0), knots_(std::move(knots)), durations_(std::move(durations)), kinds_(std::move(kinds)) {
  if (knots_.size() != durations_.size() + 1 || kinds_.size() != durations_.size())
    throw Error(ErrorCode::DimensionMismatch, "spline needs one more knot than segments");
  ends_.reserve(durations_.size());
  double t = t0_;
  for (double d : durations_) {
    require_positive(d);
    t += d;
    ends_.push_back(t);
  }
}

HermiteSegment SplineTrajectory::segment(std::size_t k) const {
  const Knot& a = knots_.at(k);
  const Knot& b = knots_.at(k + 1);
  return {a.value, b.value, a.slope, b.slope, durations_[k], kinds_[k]};
}

void SplineTrajectory::check_time(double t) const {
  if (durations_.empty() || t < t0_ - kTimeSlack || t > end_time() + kTimeSlack)
    throw Error(ErrorCode::OutOfHorizon, "t = " + std::to_string(t) + " outside [" +
                                             std::to_string(t0_) + ", " +
                                             std::to_string(end_time()) + "]");
}

std::size_t SplineTrajectory::locate(double t) const {
  check_time(t);
  const auto it = std::upper_bound(ends_.begin(), ends_.end(), t);
  if (it == ends_.end()) return ends_.size() - 1;
  return static_cast<std::size_t>(it - ends_.begin());
}

namespace {
double local_time(double t, double start, double Ts) { return std::clamp(t - start, 0.0, Ts); }
}  // namespace

std::pair<double, double> SplineTrajectory::eval(double t) const {
  const std::size_t k = locate(t);
  if (is_zero_kind(kinds_[k])) return {0.0, 0.0};
  const auto c = coefficients(segment(k));
  const double tau = local_time(t, segment_start(k), durations_[k]);
  const double v = c.a0 + tau * (c.a1 + tau * (c.a2 + tau * c.a3));
  const double d = c.a1 + tau * (2.0 * c.a2 + 3.0 * tau * c.a3);
  return {v, d};
}

double SplineTrajectory::d_eval_d_duration(double t, std::size_t seg) const {
  if (seg >= durations_.size()) throw Error(ErrorCode::OutOfHorizon, "segment index out of range");
  const std::size_t k = locate(t);
  if (k < seg || is_zero_kind(kinds_[k])) return 0.0;
  const HermiteSegment s = segment(k);
  const double tau = local_time(t, segment_start(k), s.Ts);
  if (k > seg) return -eval(t).second;
  const double T = s.Ts;
  const double dy = s.y0 - s.y1;
  const double da2 = 6.0 * dy / (T * T * T) + (2.0 * s.ydot0 + s.ydot1) / (T * T);
  const double da3 = -6.0 * dy / (T * T * T * T) - 2.0 * (s.ydot0 + s.ydot1) / (T * T * T);
  return da2 * tau * tau + da3 * tau * tau * tau;
}

KnotWeights SplineTrajectory::weights(double t) const {
  KnotWeights out;
  const std::size_t k = locate(t);
  out.segment = k;
  out.index = {2 * k, 2 * k + 1, 2 * k + 2, 2 * k + 3};
  if (is_zero_kind(kinds_[k])) return out;
  out.w = hermite_basis(local_time(t, segment_start(k), durations_[k]), durations_[k]);
  return out;
}

KnotWeights SplineTrajectory::d_weights_d_duration(double t, std::size_t seg) const {
  KnotWeights out;
  const std::size_t k = locate(t);
  out.segment = k;
  out.index = {2 * k, 2 * k + 1, 2 * k + 2, 2 * k + 3};
  if (k < seg || is_zero_kind(kinds_[k])) return out;
  const double tau = local_time(t, segment_start(k), durations_[k]);
  if (k > seg) {
    const auto d = hermite_basis_dtau(tau, durations_[k]);
    for (int i = 0; i < 4; ++i) out.w[i] = -d[i];
  } else {
    out.w = hermite_basis_dTs(tau, durations_[k]);
  }
  return out;
}

std::vector<std::pair<double, double>> SplineTrajectory::sample(double dt) const {
  std::vector<std::pair<double, double>> out;
  if (durations_.empty() || !(dt > 0.0)) return out;
  const auto n = static_cast<std::size_t>(std::floor(horizon() / dt + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = std::min(t0_ + static_cast<double>(i) * dt, end_time());
    out.emplace_back(t, eval(t).first);
  }
  return out;
}

}  // namespace bmpc
