#include <gtest/gtest.h>

#include <random>

#include "bmpc/spline.hpp"

namespace bmpc {
namespace {

SplineTrajectory smoothstep() {
  return SplineTrajectory(0.0, {{0.0, 0.0}, {1.0, 0.0}}, {1.0}, {SegmentKind::Stance});
}

SplineTrajectory random_traj(std::mt19937& rng, int nseg, bool with_zero) {
  std::uniform_real_distribution<double> val(-2.0, 2.0), dur(0.1, 0.6), t0(-1.0, 1.0);
  std::vector<Knot> knots(nseg + 1);
  std::vector<double> d(nseg);
  std::vector<SegmentKind> k(nseg, SegmentKind::Stance);
  for (auto& kn : knots) kn = {val(rng), val(rng)};
  for (auto& x : d) x = dur(rng);
  if (with_zero) k[nseg / 2] = SegmentKind::ZeroForce;
  return SplineTrajectory(t0(rng), knots, d, k);
}

SplineTrajectory with_duration(const SplineTrajectory& s, std::size_t seg, double Ts) {
  auto d = s.durations();
  d[seg] = Ts;
  return SplineTrajectory(s.t0(), s.knots(), d, s.kinds());
}

TEST(Coefficients, ConstantSegment) {
  const auto c = coefficients({2.5, 2.5, 0.0, 0.0, 0.37, SegmentKind::Stance});
  EXPECT_EQ(c.a0, 2.5);
  EXPECT_EQ(c.a1, 0.0);
  EXPECT_EQ(c.a2, 0.0);
  EXPECT_EQ(c.a3, 0.0);
}

TEST(Coefficients, Smoothstep) {
  const auto c = coefficients({0.0, 1.0, 0.0, 0.0, 1.0, SegmentKind::Stance});
  EXPECT_DOUBLE_EQ(c.a2, 3.0);
  EXPECT_DOUBLE_EQ(c.a3, -2.0);
  EXPECT_DOUBLE_EQ(smoothstep().eval(0.5).first, 0.5);
}

TEST(Coefficients, RejectsNonpositiveDuration) {
  for (double Ts : {0.0, -0.1}) {
    try {
      coefficients({0, 1, 0, 0, Ts, SegmentKind::Stance});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NonpositiveDuration);
    }
  }
  EXPECT_THROW(SplineTrajectory(0.0, {{}, {}}, {0.0}, {SegmentKind::Stance}), Error);
}

TEST(Eval, StartAndZeroKinds) {
  const SplineTrajectory s(1.0, {{0.7, 1.0}, {3.0, -1.0}, {2.0, 4.0}}, {0.3, 0.4},
                           {SegmentKind::Swing, SegmentKind::ConstantZero});
  EXPECT_EQ(s.eval(1.0).first, 0.7);
  for (double t : {1.3, 1.4, 1.5, 1.7}) {
    EXPECT_EQ(s.eval(t).first, 0.0);
    EXPECT_EQ(s.eval(t).second, 0.0);
  }
  EXPECT_EQ(s.locate(1.3), 1u);  // right segment at a junction
  EXPECT_EQ(s.locate(1.7), 1u);  // final point closed
}

TEST(Eval, OutOfHorizon) {
  const auto s = smoothstep();
  for (double t : {-0.01, 1.01}) {
    try {
      s.eval(t);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::OutOfHorizon);
    }
  }
}

TEST(Eval, EndpointInterpolation) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> val(-5.0, 5.0), dur(0.01, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const HermiteSegment seg{val(rng), val(rng), val(rng), val(rng), dur(rng), SegmentKind::Swing};
    const auto c = coefficients(seg);
    const double T = seg.Ts;
    const double v1 = c.a0 + c.a1 * T + c.a2 * T * T + c.a3 * T * T * T;
    const double d1 = c.a1 + 2 * c.a2 * T + 3 * c.a3 * T * T;
    EXPECT_NEAR(c.a0, seg.y0, 1e-12);
    EXPECT_NEAR(c.a1, seg.ydot0, 1e-12);
    EXPECT_NEAR(v1, seg.y1, 1e-12 * std::max(1.0, std::abs(seg.y1)) * 10);
    EXPECT_NEAR(d1, seg.ydot1, 1e-12 * std::max(1.0, std::abs(seg.ydot1)) * 10);
  }
}

TEST(Eval, JunctionsAreContinuous) {
  std::mt19937 rng(3);
  const auto s = random_traj(rng, 5, false);
  for (std::size_t k = 1; k < s.num_segments(); ++k) {
    const double tj = s.segment_start(k);
    const auto left = coefficients(s.segment(k - 1));
    const double T = s.durations()[k - 1];
    const double vl = left.a0 + left.a1 * T + left.a2 * T * T + left.a3 * T * T * T;
    EXPECT_NEAR(vl, s.eval(tj).first, 1e-12);
  }
}

TEST(Weights, ReproduceEval) {
  std::mt19937 rng(5);
  const auto s = random_traj(rng, 6, true);
  std::vector<double> x;
  for (const auto& k : s.knots()) {
    x.push_back(k.value);
    x.push_back(k.slope);
  }
  std::uniform_real_distribution<double> u(s.t0(), s.end_time());
  for (int i = 0; i < 200; ++i) {
    const double t = u(rng);
    const auto w = s.weights(t);
    double v = 0.0;
    for (int j = 0; j < 4; ++j) v += w.w[j] * x[w.index[j]];
    EXPECT_NEAR(v, s.eval(t).first, 1e-12);
  }
}

TEST(DurationDerivative, CausalAndConstant) {
  const SplineTrajectory s(0.0, {{1.0, 0.0}, {1.0, 0.0}, {4.0, 2.0}}, {0.5, 0.5},
                           {SegmentKind::Stance, SegmentKind::Stance});
  EXPECT_EQ(s.d_eval_d_duration(0.2, 1), 0.0);
  for (std::size_t seg : {0u, 1u}) EXPECT_NEAR(s.d_eval_d_duration(0.3, seg), 0.0, 1e-15);
}

TEST(DurationDerivative, MatchesFiniteDifferences) {
  std::mt19937 rng(2024);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_traj(rng, 4, trial % 3 == 0);
    std::uniform_int_distribution<std::size_t> pick(0, s.num_segments() - 1);
    const std::size_t seg = pick(rng);
    // Keep away from junctions so both perturbed trajectories share the segment index.
    std::uniform_real_distribution<double> u(s.t0() + 1e-4, s.end_time() - s.durations()[seg] * 0.1);
    double t = u(rng);
    const std::size_t k = s.locate(t);
    const double start = s.segment_start(k);
    const double end = start + s.durations()[k];
    t = std::clamp(t, start + 1e-4, end - 1e-4);
    const double fd = (with_duration(s, seg, s.durations()[seg] + h).eval(t).first -
                       with_duration(s, seg, s.durations()[seg] - h).eval(t).first) /
                      (2 * h);
    worst = std::max(worst, std::abs(fd - s.d_eval_d_duration(t, seg)));
    // Knot-weight form agrees with the scalar form.
    const auto dw = s.d_weights_d_duration(t, seg);
    double v = 0.0;
    for (int j = 0; j < 4; ++j) {
      const auto& kn = s.knots()[dw.index[j] / 2];
      v += dw.w[j] * (dw.index[j] % 2 == 0 ? kn.value : kn.slope);
    }
    EXPECT_NEAR(v, s.d_eval_d_duration(t, seg), 1e-9);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Sample, CoversHorizon) {
  const auto pts = smoothstep().sample(0.25);
  ASSERT_EQ(pts.size(), 5u);
  EXPECT_DOUBLE_EQ(pts.back().first, 1.0);
  EXPECT_DOUBLE_EQ(pts.back().second, 1.0);
}

}  // namespace
}  // namespace bmpc
