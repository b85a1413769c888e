#include <gtest/gtest.h>

#include <algorithm>
#include <charconv>
#include <random>
#include <sstream>

#include "bmpc/sim.hpp"

namespace bmpc {
namespace {

Scenario stand(double duration) {
  Scenario s;
  s.name = "stand";
  s.duration = duration;
  s.bilevel = false;
  s.initial.r = Vec3(0.0, 0.0, s.height);
  s.recovery.window = std::min(s.recovery.window, duration);
  return s;
}

std::string csv(const RunResult& r) {
  std::ostringstream os;
  write_trace_csv(os, r.trace);
  return os.str();
}

ErrorCode parse_error(const std::string& text) {
  try {
    scenario_from_json(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::SolverFailure;
}

TEST(Sim, StandHoldsPosition) {
  const RunResult r = run_scenario(stand(5.0));
  EXPECT_FALSE(r.summary.failed);
  EXPECT_TRUE(r.summary.recovered);
  EXPECT_LT(r.summary.max_drift, 0.02);
  EXPECT_EQ(r.summary.cycles, 100);
  EXPECT_EQ(r.summary.stale_cycles, 0);
  EXPECT_LT(r.summary.max_eq_residual, 1e-8);
  EXPECT_LT(r.summary.max_force_violation, 1e-6);
}

TEST(Sim, ZeroDurationDisturbanceChangesNothing) {
  Scenario a = stand(1.0);
  Scenario b = a;
  b.disturbances.push_back({0.3, 0.0, Vec3(200.0, -80.0, 10.0)});
  EXPECT_EQ(csv(run_scenario(a)), csv(run_scenario(b)));
}

TEST(Sim, PushMovesTheBodyAlongTheForce) {
  Scenario s = stand(1.0);
  s.disturbances.push_back({0.2, 0.2, Vec3(0.0, 40.0, 0.0)});
  const RunResult r = run_scenario(s);
  ASSERT_FALSE(r.summary.failed);
  // during the push the y momentum grows, then the controller brakes it
  const auto& mid = r.trace[8];
  EXPECT_GT(mid.x.l.y(), 1.0);
  EXPECT_GT(r.trace.back().x.r.y(), 0.0);
  EXPECT_NEAR(r.trace.back().x.r.x(), 0.0, 1e-3);
}

TEST(Sim, TraceIsReproducibleWithThreads) {
  Scenario s = stand(0.6);
  s.gait = GaitPattern::Trot;
  s.bilevel = true;
  s.bilevel_cfg.k_start = 2;
  s.bilevel_cfg.threads = 3;
  const RunResult a = run_scenario(s);
  const RunResult b = run_scenario(s);
  EXPECT_GT(a.summary.high_level_steps, 0);
  EXPECT_EQ(csv(a), csv(b));
  EXPECT_LT(a.summary.max_eq_residual, 1e-6);
  EXPECT_LT(a.summary.max_force_violation, 1e-6);
}

TEST(Sim, BallisticMomentumOverOneSecond) {
  // plant stepped at sim_dt with every force zeroed, spinning about a principal axis
  const SrbParams p;
  SrbState x;
  x.r = Vec3(0.1, -0.2, 2.0);
  x.l = Vec3(1.3, -0.4, 2.0);
  x.Izeta = p.I_R * Vec3(0.0, 0.0, 0.7);
  const double h = 0.005;
  for (int k = 0; k < 200; ++k) x = integrate(x, SrbInput{}, h, p);
  const Vec3 l = Vec3(1.3, -0.4, 2.0) + p.m * p.g;
  const Vec3 r = Vec3(0.1, -0.2, 2.0) + Vec3(1.3, -0.4, 2.0) / p.m + 0.5 * p.g;
  EXPECT_LT((x.l - l).norm(), 1e-6);
  EXPECT_LT((x.r - r).norm(), 1e-6);
  EXPECT_LT((x.Izeta - p.I_R * Vec3(0.0, 0.0, 0.7)).norm(), 1e-6);
}

TEST(Sim, CsvRowsMatchHeader) {
  Scenario s = stand(0.3);
  s.gait = GaitPattern::Trot;
  const RunResult r = run_scenario(s);
  for (bool timing : {false, true}) {
    std::ostringstream os;
    write_trace_csv(os, r.trace, timing);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    const auto cols = std::count(line.begin(), line.end(), ',');
    EXPECT_EQ(cols, timing ? 27 : 24);
    int rows = 0;
    while (std::getline(in, line)) {
      EXPECT_EQ(std::count(line.begin(), line.end(), ','), cols);
      ++rows;
    }
    EXPECT_EQ(rows, 6);
  }
}

TEST(Sim, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 7 - 3);
    const std::string s = format_double(v);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    EXPECT_EQ(back, v);
  }
}

TEST(Scenario, JsonRoundTrip) {
  Scenario s = stand(2.5);
  s.gait = GaitPattern::Pace;
  s.target = Eigen::Vector2d(0.5, -0.25);
  s.disturbances.push_back({1.0, 0.2, Vec3(1.0, 2.0, 3.0)});
  s.mpc.N = 12;
  s.bilevel_cfg.alphas = {0.25, 0.5, 1.0};
  s.bilevel_cfg.barrier_enabled = true;
  const std::string text = scenario_to_json(s);
  const Scenario t = scenario_from_json(text);
  EXPECT_EQ(scenario_to_json(t), text);
  EXPECT_EQ(t.gait, GaitPattern::Pace);
  EXPECT_EQ(t.mpc.N, 12);
  ASSERT_EQ(t.disturbances.size(), 1u);
  EXPECT_EQ(t.disturbances[0].force, Vec3(1.0, 2.0, 3.0));
}

TEST(Scenario, DefaultsFromMinimalDocument) {
  const Scenario s = scenario_from_json(R"({"name": "x", "height": 0.28})");
  EXPECT_EQ(s.gait, GaitPattern::Stand);
  EXPECT_DOUBLE_EQ(s.initial.r.z(), 0.28);
  EXPECT_DOUBLE_EQ(s.target_position().z(), 0.28);
}

TEST(Scenario, RejectsUnknownAndMalformed) {
  EXPECT_EQ(parse_error(R"({"name": "x", "durattion": 3})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"mpc": {"N": 20, "gain": 1}})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"duration": "long"})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"target": [1, 2, 3]})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"gait": "gallop"})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"duration": -1})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error(R"({"sim_dt": 0.1})"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error("{not json"), ErrorCode::ScenarioInvalid);
  EXPECT_EQ(parse_error("[]"), ErrorCode::ScenarioInvalid);
}

TEST(Matrix, PushAxes) {
  const Scenario base = stand(1.0);
  EXPECT_EQ(with_push(base, PushAxis::X, 30.0).disturbances[0].force, Vec3(30.0, 0.0, 0.0));
  EXPECT_EQ(with_push(base, PushAxis::Y, 30.0).disturbances[0].force, Vec3(0.0, 30.0, 0.0));
  EXPECT_EQ(with_push(base, PushAxis::XY, 25.0).disturbances[0].force, Vec3(25.0, 25.0, 0.0));
  EXPECT_DOUBLE_EQ(with_push(base, PushAxis::X, 1.0).disturbances[0].duration, 0.3);
  EXPECT_EQ(push_axis_from_string("xy"), PushAxis::XY);
  EXPECT_THROW(push_axis_from_string("z"), Error);
}

TEST(Matrix, ZeroMagnitudeRecoversBothWays) {
  const auto cells = run_matrix(stand(1.5), PushAxis::X, {0.0});
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_TRUE(cells[0].on.recovered);
  EXPECT_TRUE(cells[0].off.recovered);
  EXPECT_TRUE(cells[0].on.bilevel);
  EXPECT_FALSE(cells[0].off.bilevel);
  std::ostringstream os;
  print_matrix(os, cells);
  EXPECT_NE(os.str().find("1/1"), std::string::npos);
}

TEST(Benchmark, RowsAndReferences) {
  Scenario s = stand(0.3);
  const auto rows = benchmark(s, {20, 10});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].dt, 0.05);
  ASSERT_TRUE(rows[0].reference.has_value());
  EXPECT_DOUBLE_EQ((*rows[0].reference)[0], 8.0);
  EXPECT_DOUBLE_EQ(rows[1].dt, 0.1);
  EXPECT_FALSE(rows[1].reference.has_value());
  EXPECT_GT(rows[0].mpc_ms, 0.0);
  EXPECT_THROW(benchmark(s, {}), Error);
}

TEST(GradCheck, AgreesWithDifferencesOnTrot) {
  Scenario s = stand(1.0);
  s.gait = GaitPattern::Trot;
  s.rng_seed = 11;
  const GradCheckReport rep = grad_check(s, 3);
  EXPECT_EQ(rep.trials, 3);
  EXPECT_GT(rep.checked_entries + rep.degenerate, 0);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace bmpc
