// bmpc: closed-loop runs of the bilevel MPC on the SRB plant.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bmpc/sim.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kScenarioInvalid = 2;
constexpr int kSolverFailure = 3;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilevel MPC gait timing on a single-rigid-body plant"};
  app.require_subcommand(1);

  std::string scenario_path, trace_path, summary_path;
  bool no_bilevel = false;
  auto* sim = app.add_subcommand("simulate", "run one closed-loop scenario");
  sim->add_option("scenario", scenario_path)->required();
  sim->add_flag("--no-bilevel", no_bilevel, "keep the nominal contact schedule");
  sim->add_option("--trace", trace_path, "per-cycle CSV");
  sim->add_option("--summary", summary_path, "summary JSON");

  std::string axis = "x";
  std::vector<double> forces;
  auto* mat = app.add_subcommand("matrix", "push recovery with and without the high level");
  mat->add_option("scenario", scenario_path)->required();
  mat->add_option("--axis", axis)->check(CLI::IsMember({"x", "y", "xy"}));
  mat->add_option("--forces", forces)->required()->delimiter(',');

  int trials = 10;
  auto* gc = app.add_subcommand("grad-check", "QP-sensitivity gradient vs finite differences");
  gc->add_option("scenario", scenario_path)->required();
  gc->add_option("--trials", trials);

  std::vector<int> nodes;
  auto* bench = app.add_subcommand("benchmark", "timing per horizon length");
  bench->add_option("scenario", scenario_path)->required();
  bench->add_option("--nodes", nodes)->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    bmpc::Scenario sc = bmpc::load_scenario(scenario_path);
    if (*sim) {
      if (no_bilevel) sc.bilevel = false;
      const bmpc::RunResult r = bmpc::run_scenario(sc);
      if (!trace_path.empty()) {
        std::ostringstream os;
        bmpc::write_trace_csv(os, r.trace);
        write_file(trace_path, os.str());
      }
      const std::string js = bmpc::summary_to_json(r.summary);
      if (!summary_path.empty()) write_file(summary_path, js + "\n");
      std::cout << js << '\n';
      return r.summary.failed ? kSolverFailure : kOk;
    }
    if (*mat) {
      const auto cells = bmpc::run_matrix(sc, bmpc::push_axis_from_string(axis), forces);
      bmpc::print_matrix(std::cout, cells);
      return kOk;
    }
    if (*gc) {
      const auto rep = bmpc::grad_check(sc, trials);
      std::cout << "trials " << rep.trials << "\nchecked_entries " << rep.checked_entries
                << "\ndegenerate " << rep.degenerate << "\nskipped_kinks " << rep.skipped_kinks
                << "\nmax_rel_error " << rep.max_rel_error << "\nmax_grad_norm "
                << rep.max_grad_norm << '\n';
      return kOk;
    }
    if (*bench) {
      bmpc::print_benchmark(std::cout, bmpc::benchmark(sc, nodes));
      return kOk;
    }
  } catch (const bmpc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == bmpc::ErrorCode::ScenarioInvalid) return kScenarioInvalid;
    return kSolverFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
  return kOk;
}
