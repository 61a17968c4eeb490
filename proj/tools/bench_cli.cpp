#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "bstep/criticality.hpp"
#include "bstep/driver.hpp"
#include "bstep/train.hpp"

namespace fs = std::filesystem;
using namespace bstep;

namespace {

struct Overrides {
  std::optional<double> c0, rho, c_max, eta1, eta2, sigma, zeta, eps_phi, eps_feas, eps_f, eps_sub;
  std::string nu, trial_step;
  std::optional<int> stopping, max_iters;
};

NuStrategy parse_nu(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (colon == std::string::npos) throw std::invalid_argument("--nu expects s1:FILE, s2:DELTA or s3:GAMMA0");
  const std::string arg = text.substr(colon + 1);
  NuStrategy s;
  if (kind == "s1") {
    s.kind = NuStrategy::Kind::kS1;
    std::ifstream in(arg);
    if (!in) throw std::invalid_argument(fmt::format("cannot read nu sequence '{}'", arg));
    double v;
    while (in >> v) s.sequence.push_back(v);
  } else if (kind == "s2") {
    s.kind = NuStrategy::Kind::kS2;
    s.delta_min = std::stod(arg);
  } else if (kind == "s3") {
    s.kind = NuStrategy::Kind::kS3;
    s.gamma0 = std::stod(arg);
  } else {
    throw std::invalid_argument(fmt::format("unknown nu strategy '{}'", kind));
  }
  return s;
}

TrialStep parse_trial(const std::string& text, TrialStep t) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (kind == "const" && !arg.empty()) {
    t.kind = TrialStep::Kind::kConstant;
    t.alpha = std::stod(arg);
  } else if (kind == "prev") {
    t.kind = TrialStep::Kind::kPrevious;
  } else if (kind == "adaptive" && !arg.empty()) {
    t.kind = TrialStep::Kind::kSelfAdaptive;
    t.gamma = std::stod(arg);
  } else {
    throw std::invalid_argument("--trial-step expects const:A, prev or adaptive:G");
  }
  return t;
}

void apply(const Overrides& o, PenaltyConfig& p, SolverConfig& s) {
  if (o.c0) p.c0 = *o.c0;
  if (o.rho) p.rho = *o.rho;
  if (o.c_max) p.c_max = *o.c_max;
  if (o.eta1) s.eta1 = *o.eta1;
  if (o.eta2) s.eta2 = *o.eta2;
  if (o.sigma) s.sigma = *o.sigma;
  if (o.zeta) s.zeta = *o.zeta;
  if (o.eps_phi) s.eps_phi = *o.eps_phi;
  if (o.eps_feas) s.eps_feas = *o.eps_feas;
  if (o.eps_f) s.eps_f = *o.eps_f;
  if (o.eps_sub) s.eps_sub = *o.eps_sub;
  if (!o.nu.empty()) s.nu = parse_nu(o.nu);
  if (!o.trial_step.empty()) s.trial = parse_trial(o.trial_step, s.trial);
  if (o.stopping) {
    if (*o.stopping != 1 && *o.stopping != 2) throw std::invalid_argument("--stopping must be 1 or 2");
    s.stopping = *o.stopping == 1 ? StoppingRule::kCriterion1 : StoppingRule::kCriterion2;
  }
  if (o.max_iters) s.max_outer_iters = *o.max_iters;
  p.check();
  s.check();
}

struct Job {
  std::string name;
  ProblemSpec spec;
  X0Spec base;
  PenaltyConfig penalty;
  SolverConfig solver;
  Grid grid;
  DiscreteTrajectory initial;
};

Job from_train(const train::Instance& inst) {
  return {inst.variant, inst.spec, inst.base, inst.penalty, inst.solver, inst.grid, inst.initial};
}

Job from_file(const std::string& path, std::optional<std::size_t> grid_flag) {
  ProblemFile file = load_problem(path);
  std::size_t N = 0;
  if (grid_flag) N = *grid_flag;
  else if (file.spec.grid_intervals) N = *file.spec.grid_intervals;
  else N = 480;
  Grid grid(file.spec.T, N);
  PenaltyConfig p;
  if (file.control_box_mode) p.control_box_mode = *file.control_box_mode;
  SolverConfig s;
  if (!line_search_admissible(file.base)) s.trial = {TrialStep::Kind::kConstant, 0.0, 0.5};
  const std::string name = fs::path(path).stem().string();
  return {name, file.spec, file.base, p, s, grid, DiscreteTrajectory::zeros(file.spec.n, file.spec.m, N)};
}

nlohmann::json run_job(const Job& job, const fs::path& out, bool verify, bool verbose) {
  std::ofstream log(out / (job.name + "_iterations.csv"));
  write_iteration_csv_header(log);
  const RunSummary summary = run(job.spec, job.base, job.grid, job.penalty, job.solver, job.initial,
                                 [&](const IterationRecord& r) {
                                   write_iteration_csv_row(log, r);
                                   log.flush();
                                   if (verbose)
                                     std::cerr << fmt::format("{} k={} c={} Phi={:.6f} J={:.6f} phi={:.6f} alpha={}\n",
                                                              job.name, r.k, r.c_next, r.Phi_next, r.J_next,
                                                              r.phi_next, r.alpha);
                                 });
  std::ofstream traj(out / (job.name + "_trajectory.csv"));
  write_trajectory_csv(traj, summary.traj, job.grid);
  nlohmann::json doc = to_json(summary);
  doc["variant"] = job.name;
  doc["N"] = job.grid.N;
  if (verify) {
    const double eps = job.solver.eps_f + job.solver.eps_sub;
    CriticalityOptions opts;
    opts.eps_phi = job.solver.eps_phi;
    const CriticalityReport report =
        verify_criticality(summary.traj, job.spec, job.base, job.grid, job.penalty, summary.c, eps, opts);
    const nlohmann::json rj = to_json(report);
    std::ofstream(out / (job.name + "_criticality.json")) << rj.dump(2) << '\n';
    doc["criticality"] = rj;
  }
  std::ofstream(out / (job.name + "_summary.json")) << doc.dump(2) << '\n';
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosted steering exact penalty DCA for DC optimal control"};
  std::string problem_path, train_variant, out_dir = ".";
  std::optional<std::size_t> grid;
  Overrides o;
  bool verify = false, warm = false, verbose = false;
  auto* problem_opt = app.add_option("--problem", problem_path, "Problem JSON file");
  auto* train_opt = app.add_option("--train", train_variant, "Train variant or 'all'");
  problem_opt->excludes(train_opt);
  app.add_option("--grid", grid, "Number of grid intervals");
  app.add_option("--c0", o.c0);
  app.add_option("--rho", o.rho);
  app.add_option("--c-max", o.c_max);
  app.add_option("--eta1", o.eta1);
  app.add_option("--eta2", o.eta2);
  app.add_option("--sigma", o.sigma);
  app.add_option("--zeta", o.zeta);
  app.add_option("--eps-phi", o.eps_phi);
  app.add_option("--eps-feas", o.eps_feas);
  app.add_option("--eps-f", o.eps_f);
  app.add_option("--eps-sub", o.eps_sub);
  app.add_option("--nu", o.nu, "s1:FILE | s2:DELTA | s3:GAMMA0");
  app.add_option("--trial-step", o.trial_step, "const:A | prev | adaptive:G");
  app.add_option("--stopping", o.stopping, "1 or 2");
  app.add_option("--max-iters", o.max_iters);
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--verify-criticality", verify);
  app.add_flag("--warm-start", warm, "Start train runs from a simulated speed-limit profile");
  app.add_flag("-v,--verbose", verbose);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (problem_path.empty() == train_variant.empty()) {
    std::cerr << "exactly one of --problem or --train is required\n" << app.help();
    return 1;
  }

  std::vector<Job> jobs;
  try {
    if (!problem_path.empty()) {
      jobs.push_back(from_file(problem_path, grid));
    } else {
      const std::size_t N = grid.value_or(480);
      std::vector<std::string> names;
      if (train_variant == "all") names = train::variants();
      else names = {train_variant};
      for (const auto& name : names) {
        Job job = from_train(train::build(name, N));
        if (warm) job.initial = train::warm_start(job.grid);
        jobs.push_back(std::move(job));
      }
    }
    for (auto& job : jobs) apply(o, job.penalty, job.solver);
    fs::create_directories(out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  bool all_converged = true;
  nlohmann::json table = nlohmann::json::array();
  std::cout << fmt::format("{:<12} {:>10} {:>6} {:>10} {:>12} {:>10}  {}\n", "method", "time[s]", "k", "c", "J",
                           "phi", "termination");
  for (const auto& job : jobs) {
    nlohmann::json doc;
    try {
      doc = run_job(job, out_dir, verify, verbose);
    } catch (const std::exception& e) {
      std::cerr << "error in " << job.name << ": " << e.what() << '\n';
      return 1;
    }
    table.push_back(doc);
    const std::string term = doc["termination"].get<std::string>();
    all_converged = all_converged && term == "converged";
    std::cout << fmt::format("{:<12} {:>10.1f} {:>6} {:>10g} {:>12.4f} {:>10.4f}  {}\n", job.name,
                             doc["wall_time"].get<double>(), doc["iterations"].get<int>(), doc["c"].get<double>(),
                             doc["J"].get<double>(), doc["phi"].get<double>(), term);
  }
  if (jobs.size() > 1) std::ofstream(fs::path(out_dir) / "table.json") << table.dump(2) << '\n';
  return all_converged ? 0 : 2;
}
