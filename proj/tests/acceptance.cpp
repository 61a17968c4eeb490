// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "bstep/criticality.hpp"
#include "bstep/driver.hpp"
#include "bstep/train.hpp"
#include "instances.hpp"

using namespace bstep;
using bstep::testing::RandomExpr;

namespace {

constexpr std::size_t kGrid = 480;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& note) {
    if (!ok) pass = false;
    notes.push_back((ok ? "  ok   " : "  FAIL ") + note);
  }
};

int g_failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  for (const auto& n : o.notes) fmt::print("{}\n", n);
  fmt::print("{} criterion {}: {}\n", o.pass ? "PASS" : "FAIL", id, title);
  std::fflush(stdout);
  if (!o.pass) ++g_failures;
}

struct BenchRun {
  train::Instance inst;
  RunSummary summary;
};

std::map<std::string, BenchRun>& bench() {
  static std::map<std::string, BenchRun> runs;
  if (runs.empty()) {
    for (const auto& v : train::variants()) {
      auto inst = train::build(v, kGrid);
      auto summary = run(inst.spec, inst.base, inst.grid, inst.penalty, inst.solver, inst.initial);
      fmt::print("  run {:<11} k={:<3} c={:<6g} J={:.4f} phi={:.2e} {} {:.1f}s\n", v, summary.iterations, summary.c,
                 summary.J, summary.phi, termination_name(summary.termination), summary.wall_time);
      std::fflush(stdout);
      runs.emplace(v, BenchRun{std::move(inst), std::move(summary)});
    }
  }
  return runs;
}

DiscreteTrajectory random_train_traj(std::mt19937_64& rng, std::size_t N) {
  std::uniform_real_distribution<double> pos(-20.0, 260.0), vel(-10.0, 10.0), ctl(-2.0, 2.0);
  auto t = DiscreteTrajectory::zeros(2, 1, N);
  for (std::size_t j = 0; j <= N; ++j) {
    t.x(j, 0) = pos(rng);
    t.x(j, 1) = vel(rng);
  }
  for (std::size_t j = 0; j < N; ++j) t.u(j, 0) = ctl(rng);
  return t;
}

// ---------------------------------------------------------------------------

void criterion1() {
  Outcome o;
  for (const auto& v : train::variants()) {
    const auto& s = bench().at(v).summary;
    o.require(s.termination == Termination::kConverged, fmt::format("{} terminates converged ({})", v,
                                                                    termination_name(s.termination)));
    o.require(s.phi < 0.1, fmt::format("{} final phi {:.3e} < 0.1", v, s.phi));
    o.require(s.c == 100.0, fmt::format("{} final c {:g} == 100", v, s.c));
    o.require(s.penalty_increases == 1, fmt::format("{} penalty increased {} time(s), expected 1", v,
                                                    s.penalty_increases));
    o.require(s.J >= 19.0 && s.J <= 24.0, fmt::format("{} final J {:.4f} in [19, 24]", v, s.J));
    o.require(s.iterations >= 20 && s.iterations <= 116,
              fmt::format("{} iterations {} within [20, 116]", v, s.iterations));
    o.require(s.wall_time <= 1800.0, fmt::format("{} wall time {:.1f}s <= 1800s", v, s.wall_time));
  }
  report(1, "train benchmark reproduction", o);
}

void check_majorant_pair(const ProblemSpec& spec, const Grid& g, const PenaltyConfig& pcfg,
                         const DiscreteTrajectory& base, const std::vector<DiscreteTrajectory>& samples, double c,
                         double& worst_q, double& worst_g, double& worst_eq) {
  const auto bundle = collect_subgradients(base, spec, g, pcfg);
  worst_eq = std::max(worst_eq, std::abs(eval_Gamma(base, bundle, spec, g, pcfg) - eval_phi(base, spec, g, pcfg)));
  worst_eq = std::max(worst_eq, std::abs(eval_Q(base, bundle, spec, g, pcfg, c) - bundle.correction -
                                         eval_Phi(base, spec, g, pcfg, c)));
  for (const auto& t : samples) {
    worst_q = std::max(worst_q, eval_Phi(t, spec, g, pcfg, c) - (eval_Q(t, bundle, spec, g, pcfg, c) - bundle.correction));
    worst_g = std::max(worst_g, eval_phi(t, spec, g, pcfg) - eval_Gamma(t, bundle, spec, g, pcfg));
  }
}

void criterion2() {
  Outcome o;
  const double tol = 1e-8;
  {
    std::mt19937_64 rng(101);
    double wq = -INFINITY, wg = -INFINITY, we = 0.0;
    const auto full = train::build_fully_penalized(kGrid);
    std::vector<std::pair<ProblemSpec, PenaltyConfig>> specs{{full.spec, full.penalty}};
    for (const auto& v : train::variants()) {
      const auto inst = train::build(v, kGrid);
      specs.emplace_back(inst.spec, inst.penalty);
    }
    const Grid g(train::kHorizon, kGrid);
    for (const auto& [spec, pcfg] : specs) {
      std::vector<DiscreteTrajectory> samples;
      for (int i = 0; i < 1000; ++i) samples.push_back(random_train_traj(rng, kGrid));
      check_majorant_pair(spec, g, pcfg, random_train_traj(rng, kGrid), samples, 100.0, wq, wg, we);
    }
    o.require(wq <= tol, fmt::format("train: max Phi - (Q - correction) = {:.3e} <= 1e-8", wq));
    o.require(wg <= tol, fmt::format("train: max phi - Gamma = {:.3e} <= 1e-8", wg));
    o.require(we <= tol, fmt::format("train: equality at base within {:.3e}", we));
  }
  {
    RandomExpr gen(202);
    double wq = -INFINITY, wg = -INFINITY, we = 0.0;
    for (int id = 0; id < 20; ++id) {
      const auto n = static_cast<std::size_t>(gen.pick(1, 2));
      const auto m = static_cast<std::size_t>(gen.pick(1, 2));
      const auto in = bstep::testing::random_instance(gen, n, m);
      const Grid g(in.spec.T, static_cast<std::size_t>(gen.pick(3, 8)));
      std::vector<DiscreteTrajectory> samples;
      for (int i = 0; i < 1000; ++i) samples.push_back(bstep::testing::random_traj(gen, n, m, g.N));
      const auto base = bstep::testing::random_traj(gen, n, m, g.N);
      check_majorant_pair(in.spec, g, in.penalty, base, samples, gen.uniform(1.0, 1000.0), wq, wg, we);
    }
    o.require(wq <= tol, fmt::format("20 random instances: max Phi - (Q - correction) = {:.3e} <= 1e-8", wq));
    o.require(wg <= tol, fmt::format("20 random instances: max phi - Gamma = {:.3e} <= 1e-8", wg));
    o.require(we <= tol, fmt::format("20 random instances: equality at base within {:.3e}", we));
  }
  report(2, "majorant suite", o);
}

void criterion3() {
  Outcome o;
  const double tol = 1e-6;
  for (const auto& [v, br] : bench()) {
    double descent = -INFINITY, lower = -INFINITY, upper = -INFINITY;
    const double sigma = br.inst.solver.sigma;
    for (const auto& r : br.summary.records) {
      descent = std::max(descent, r.Phi_next - (r.Phi_base - sigma * r.alpha * r.alpha * r.rho * r.rho + r.nu));
      lower = std::max(lower, -(r.Q_base - r.Q_cand));
      upper = std::max(upper, (r.Q_base - r.Q_cand) - (r.Phi_base - r.Phi_next + r.nu));
    }
    o.require(descent <= tol, fmt::format("{} descent inequality worst excess {:.3e}", v, descent));
    o.require(lower <= tol, fmt::format("{} sandwich lower side worst excess {:.3e}", v, lower));
    o.require(upper <= tol, fmt::format("{} sandwich upper side worst excess {:.3e}", v, upper));
  }
  report(3, "descent-lemma suite", o);
}

void criterion4() {
  Outcome o;
  const auto in = bstep::testing::scalar_dc();
  const Grid g(1.0, 4);
  const auto base = DiscreteTrajectory::zeros(1, 1, 4);
  const auto bundle = collect_subgradients(base, in.spec, g, in.penalty);
  SubsolverOptions opts;
  opts.eps = 1e-9;
  opts.max_iter = 400;
  double previous = INFINITY;
  for (double c : {1.0, 10.0, 1e2, 1e3, 1e6}) {
    const auto r = solve_Q(bundle, in.spec, in.base, g, in.penalty, c, opts);
    const double G = eval_Gamma(r.traj, bundle, in.spec, g, in.penalty);
    o.require(r.status == SubproblemStatus::kOptimal || r.status == SubproblemStatus::kEpsOptimal,
              fmt::format("c = {:g}: status {}", c, status_name(r.status)));
    o.require(G <= previous + 2e-9, fmt::format("c = {:g}: Gamma {:.12f} non-increasing", c, G));
    previous = G;
  }
  const auto hat = solve_Gamma(bundle, in.spec, in.base, g, in.penalty, opts);
  o.require(std::abs(previous - hat.objective) <= 1e-4,
            fmt::format("Gamma at c = 1e6 {:.9f} vs min Gamma {:.9f}", previous, hat.objective));
  report(4, "Lemma-1 suite", o);
}

void criterion5() {
  Outcome o;
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> pos(-20.0, 260.0), vel(-10.0, 10.0), ctl(-2.0, 2.0);
  const auto cost = train::cost_pair();
  const auto accel = train::acceleration_pair();
  const auto speed = train::speed_pair();
  double wc = 0.0, wd = 0.0, ws = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x1 = pos(rng), x2 = vel(rng), u = ctl(rng);
    const std::vector<double> y{x1, x2, u};
    wc = std::max(wc, std::abs(eval(cost, y) - x2 * std::max(u, 0.0)));
    // the drag identity, isolated from the linear part of the velocity row
    const double split = (eval(accel, y) - u + train::kQ * x2) / (-train::kP);
    wd = std::max(wd, std::abs(train::kP * (split - x2 * std::abs(x2))));
    wd = std::max(wd, std::abs(eval(accel.convex_part, y) - eval(accel.concave_part, y) -
                               (u - train::kP * x2 * std::abs(x2) - train::kQ * x2)));
    const double limit = std::min(7.0, std::max({7.0 - 0.3 * (x1 - 90.0), 4.0, 4.0 + 0.3 * (x1 - 120.0)}));
    ws = std::max(ws, std::abs(eval(speed, y) - (x2 - limit)));
  }
  o.require(wc <= 1e-10, fmt::format("cost integrand worst error {:.3e}", wc));
  o.require(wd <= 1e-10, fmt::format("velocity row worst error {:.3e}", wd));
  o.require(ws <= 1e-10, fmt::format("speed limit worst error {:.3e}", ws));
  report(5, "DC-identity suite", o);
}

void criterion6() {
  Outcome o;
  RandomExpr gen(606);
  double worst = -INFINITY;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 4));
    const auto e = gen.expr(arity, 3);
    const auto x = gen.point(arity), y = gen.point(arity);
    const auto g = subgradient(e, x);
    double lin = eval(e, x);
    for (std::size_t k = 0; k < arity; ++k) lin += g[k] * (y[k] - x[k]);
    worst = std::max(worst, lin - eval(e, y));
  }
  o.require(worst <= 1e-12, fmt::format("subgradient inequality worst excess {:.3e} over 1e4 triples", worst));

  const double h = 1e-6;
  double fd_worst = 0.0;
  int compared = 0;
  for (int t = 0; t < 20000 && compared < 2000; ++t) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 3));
    const auto e = gen.expr(arity, 3);
    const auto p = gen.point(arity);
    const auto g = subgradient(e, p);
    bool smooth = true;
    for (std::size_t i = 0; i < arity && smooth; ++i)
      for (double d : {-1e-4, 1e-4}) {
        auto q = p;
        q[i] += d;
        const auto gq = subgradient(e, q);
        for (std::size_t j = 0; j < arity; ++j)
          if (std::abs(gq[j] - g[j]) > 1e-2 * (1.0 + std::abs(g[j]))) smooth = false;
      }
    if (!smooth) continue;
    for (std::size_t i = 0; i < arity; ++i) {
      auto a = p, b = p;
      a[i] += h;
      b[i] -= h;
      fd_worst = std::max(fd_worst, std::abs((eval(e, a) - eval(e, b)) / (2 * h) - g[i]));
    }
    ++compared;
  }
  o.require(compared >= 1000, fmt::format("{} smooth points compared", compared));
  o.require(fd_worst <= 1e-4, fmt::format("finite-difference worst error {:.3e}", fd_worst));
  report(6, "subgradient suite", o);
}

void criterion7() {
  Outcome o;
  {
    const auto in = bstep::testing::two_node();
    const Grid g(1.0, 2);
    const double c = 10.0;
    for (auto [u0, u1] : {std::pair{0.3, -0.5}, std::pair{1.5, 1.9}, std::pair{-2.0, 0.0}, std::pair{0.9, 1.1}}) {
      const auto cand = bstep::testing::from_controls(u0, u1, g);
      const auto rep = verify_criticality(cand, in.spec, in.base, g, in.penalty, c, 1e-6);
      const auto bundle = collect_subgradients(cand, in.spec, g, in.penalty);
      const double brute = eval_Q(cand, bundle, in.spec, g, in.penalty, c) -
                           bstep::testing::grid_minimum([&](double a, double b) {
                             return eval_Q(bstep::testing::from_controls(a, b, g), bundle, in.spec, g, in.penalty, c);
                           });
      o.require(std::abs(rep.Q_gap - brute) <= 1e-4,
                fmt::format("N = 2 at u = ({}, {}): Q_gap {:.6f} vs brute force {:.6f}", u0, u1, rep.Q_gap, brute));
    }
  }
  for (const auto& [v, br] : bench()) {
    if (br.summary.termination != Termination::kConverged) {
      o.require(false, fmt::format("{} did not converge, no terminal point to verify", v));
      continue;
    }
    const double eps = br.inst.solver.eps_f + br.inst.solver.eps_sub;
    const auto rep = verify_criticality(br.summary.traj, br.inst.spec, br.inst.base, br.inst.grid, br.inst.penalty,
                                        br.summary.c, eps);
    const bool ok = rep.verdict == Verdict::kEpsCritical || rep.verdict == Verdict::kGeneralizedEpsCritical;
    o.require(ok, fmt::format("{} terminal point {} (Q_gap {:.3e} <= {:.3e})", v, verdict_name(rep.verdict), rep.Q_gap,
                              eps));
  }
  report(7, "criticality oracle", o);
}

void criterion8() {
  Outcome o;
  {
    auto inst = train::build("bstep_l1", kGrid);
    inst.solver.nu.kind = NuStrategy::Kind::kS2;
    const auto s = run(inst.spec, inst.base, inst.grid, inst.penalty, inst.solver, inst.initial);
    double total = 0.0, tail = 0.0;
    const std::size_t K = s.records.size();
    for (std::size_t k = 0; k < K; ++k) {
      total += s.records[k].nu;
      if (k >= K - K / 4) tail += s.records[k].nu;
    }
    o.require(K >= 20, fmt::format("S2 run on bstep_l1 has {} iterations (needs >= 20)", K));
    o.require(total > 0.0 && tail < 0.1 * total,
              fmt::format("S2 last-quarter sum {:.3e} < 10% of total {:.3e}", tail, total));
  }
  {
    double worst = 0.0;
    for (const auto& [v, br] : bench())
      for (const auto& r : br.summary.records) {
        const double expected = 0.1 * r.rho * r.rho / (r.k + 1.0);
        worst = std::max(worst, std::abs(r.nu - expected) / std::max(1e-300, std::abs(expected)));
      }
    o.require(worst <= 1e-12, fmt::format("S3 nu matches 0.1 rho^2 / (k + 1), worst relative error {:.1e}", worst));
  }
  {
    TrialStep t;
    t.gamma = 2.0;
    TrialHistory h;
    h.steps = {{0.5, 0.5}, {0.5, 0.5}};
    o.require(choose_trial_step(t, h) == 1.0, "gamma = 2 after two full acceptances at 0.5 gives 1.0");
    h.steps = {{1.0, 0.5}, {0.5, 0.5}};
    o.require(choose_trial_step(t, h) == 0.5, "one full acceptance keeps the previous step");
    bool consistent = true;
    for (const auto& v : {"bstep_l1", "bstep_linf"}) {
      const auto& br = bench().at(v);
      const auto& rec = br.summary.records;
      for (std::size_t k = 0; k < rec.size(); ++k) {
        double expected = br.inst.solver.trial.alpha;
        if (k >= 1) expected = rec[k - 1].alpha;
        if (k >= 2 && rec[k - 2].alpha == rec[k - 2].alpha_bar && rec[k - 1].alpha == rec[k - 1].alpha_bar)
          expected *= br.inst.solver.trial.gamma;
        consistent = consistent && rec[k].alpha_bar == expected;
      }
    }
    o.require(consistent, "benchmark trial steps follow the self-adaptive rule with gamma = 0.5");
  }
  report(8, "strategy suites", o);
}

void criterion9() {
  Outcome o;
  for (const auto& [v, br] : bench()) {
    const auto& p = br.inst.penalty;
    const int bound = static_cast<int>(std::ceil(std::log10(p.c_max / p.c0) - 1e-12)) + 2;
    int worst = 0;
    for (const auto& r : br.summary.records) worst = std::max(worst, r.inner_Q_solves);
    o.require(worst <= bound, fmt::format("{} max inner solves per iteration {} <= {}", v, worst, bound));
  }
  report(9, "steering bound", o);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion10() {
  Outcome o;
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / fmt::format("bstep_acceptance_{}", ::getpid());
  std::vector<fs::path> dirs{root / "a", root / "b"};
  for (const auto& d : dirs) {
    fs::create_directories(d);
    const std::string cmd =
        fmt::format("\"{}\" --train all --grid 120 --out \"{}\" > \"{}\" 2>&1", BSTEP_CLI, d.string(),
                    (d / "stdout.txt").string());
    o.require(std::system(cmd.c_str()) == 0, fmt::format("CLI run into {}", d.string()));
  }
  int compared = 0;
  for (const auto& v : train::variants())
    for (const char* suffix : {"_iterations.csv", "_trajectory.csv"}) {
      const auto a = slurp(dirs[0] / (v + suffix));
      const auto b = slurp(dirs[1] / (v + suffix));
      o.require(!a.empty() && a == b, fmt::format("{}{} byte-identical ({} bytes)", v, suffix, a.size()));
      ++compared;
    }
  {
    RunSummary runs[2];
    for (auto& r : runs) {
      auto inst = train::build("bstep_l1", 60);
      r = run(inst.spec, inst.base, inst.grid, inst.penalty, inst.solver, inst.initial);
    }
    o.require(to_json(runs[0], false).dump() == to_json(runs[1], false).dump(),
              "in-process summaries identical apart from wall time");
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  report(10, "determinism", o);
}

}  // namespace

int main() {
  criterion5();
  criterion6();
  criterion2();
  criterion4();
  criterion9();  // triggers the benchmark runs
  criterion1();
  criterion3();
  criterion7();
  criterion8();
  criterion10();
  fmt::print("{} of 10 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
