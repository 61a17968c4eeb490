#include "bstep/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace bstep {

namespace {

void require_open_unit(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(fmt::format("{} must lie in (0, 1)", name));
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw std::invalid_argument(fmt::format("{} must be positive", name));
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

void SolverConfig::check() const {
  require_open_unit(eta1, "eta1");
  require_open_unit(eta2, "eta2");
  require_open_unit(zeta, "zeta");
  require_open_unit(sigma, "sigma");
  require_positive(eps_phi, "eps_phi");
  require_positive(eps_feas, "eps_feas");
  require_positive(eps_f, "eps_f");
  if (eps_x) require_positive(*eps_x, "eps_x");
  require_positive(eps_sub, "eps_sub");
  if (!(eps_sub_ratio > 0.0 && eps_sub_ratio <= 1.0)) throw std::invalid_argument("eps_sub_ratio must lie in (0, 1]");
  switch (nu.kind) {
    case NuStrategy::Kind::kS1:
      if (nu.sequence.empty()) throw std::invalid_argument("S1 needs a non-empty sequence");
      for (double v : nu.sequence) require_positive(v, "S1 sequence entry");
      break;
    case NuStrategy::Kind::kS2:
      require_open_unit(nu.delta_min, "delta_min");
      require_positive(nu.nu0, "nu0");
      break;
    case NuStrategy::Kind::kS3:
      require_positive(nu.gamma0, "gamma0");
      break;
  }
  if (!(trial.alpha >= 0.0)) throw std::invalid_argument("trial step must be nonnegative");
  if (trial.kind == TrialStep::Kind::kSelfAdaptive) require_positive(trial.gamma, "self-adaptive gamma");
  if (max_outer_iters < 1) throw std::invalid_argument("max_outer_iters must be at least 1");
  if (line_search_max_j < 0) throw std::invalid_argument("line_search_max_j must be nonnegative");
  if (sub_max_iter < 1) throw std::invalid_argument("sub_max_iter must be at least 1");
}

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kCMaxHit: return "c_max_hit";
    case Termination::kMaxIters: return "max_iters";
    case Termination::kAssumption2Critical: return "assumption2_critical";
  }
  return "unknown";
}

NuChoice choose_nu(const NuStrategy& strategy, const NuHistory& history) {
  switch (strategy.kind) {
    case NuStrategy::Kind::kS1: {
      const auto& s = strategy.sequence;
      if (s.empty()) throw std::invalid_argument("S1 needs a non-empty sequence");
      const auto k = static_cast<std::size_t>(history.k);
      if (k < s.size()) return {s[k], false};
      return {s.back() * std::pow(0.5, static_cast<double>(k - s.size() + 1)), true};
    }
    case NuStrategy::Kind::kS2: {
      if (history.k == 0) return {strategy.nu0, false};
      const double bracket = history.previous_decrease + history.previous_nu;
      if (!(bracket > 0.0)) return {0.5 * history.previous_nu, true};
      return {0.99 * (1.0 - strategy.delta_min) * bracket, false};
    }
    case NuStrategy::Kind::kS3:
      return {strategy.gamma0 / (history.k + 1.0) * history.rho_sq, false};
  }
  return {0.0, false};
}

double choose_trial_step(const TrialStep& strategy, const TrialHistory& history) {
  const auto& st = history.steps;
  switch (strategy.kind) {
    case TrialStep::Kind::kConstant:
      return strategy.alpha;
    case TrialStep::Kind::kPrevious:
      return st.empty() ? strategy.alpha : st.back().second;
    case TrialStep::Kind::kSelfAdaptive: {
      if (st.empty()) return strategy.alpha;
      const double prev = st.back().second;
      if (st.size() >= 2) {
        const auto& a = st[st.size() - 2];
        const auto& b = st.back();
        if (a.first == a.second && b.first == b.second) return strategy.gamma * prev;
      }
      return prev;
    }
  }
  return 0.0;
}

bool check_stopping(StoppingRule rule, const StoppingValues& v, double eps_f, double eps_phi,
                    std::optional<double> eps_x) {
  if (rule == StoppingRule::kCriterion1) {
    bool ok = std::abs(v.Phi_next - v.Phi_base) < eps_f;
    if (eps_x) ok = ok && v.rho < *eps_x;
    return ok && v.phi_next < eps_phi;
  }
  return v.Q_base - v.Q_cand < eps_f && v.Gamma_cand < eps_phi;
}

namespace {

struct CMaxHit {};

class Runner {
 public:
  Runner(const ProblemSpec& spec, const X0Spec& base_set, const Grid& grid, const PenaltyConfig& pcfg,
         const SolverConfig& scfg)
      : spec_(spec), base_set_(base_set), grid_(grid), pcfg_(pcfg), scfg_(scfg) {}

  RunSummary run(const DiscreteTrajectory& initial, const IterationObserver& observer) {
    const auto start = std::chrono::steady_clock::now();
    RunSummary summary;
    DiscreteTrajectory traj = project_onto_base(initial, spec_, base_set_, grid_);
    double c = pcfg_.c0;
    const bool admissible = line_search_admissible(base_set_);
    TrialHistory trial_history;
    NuHistory nu_history;
    summary.termination = Termination::kMaxIters;

    for (int k = 0; k < scfg_.max_outer_iters; ++k) {
      IterationRecord rec;
      rec.k = k;
      rec.c_k = c;
      rec.eps_k = scfg_.eps_sub * std::pow(scfg_.eps_sub_ratio, k);
      rec.Gamma_hat = std::numeric_limits<double>::quiet_NaN();
      sub_opts_.eps = rec.eps_k;
      sub_opts_.max_iter = scfg_.sub_max_iter;

      const SubgradientBundle bundle = collect_subgradients(traj, spec_, grid_, pcfg_);
      const double omega_base = eval_omega(traj, bundle, spec_, grid_);
      const double Gb = eval_Gamma(traj, bundle, spec_, grid_, pcfg_);
      rec.Gamma_base = Gb;

      Candidate cand;
      double cp = c;
      bool hit_cap = false;
      try {
        cand = solve_q(bundle, cp, rec);
        if (cand.Gamma > scfg_.eps_phi) {
          rec.step2_executed = true;
          SubproblemResult hat = solve_Gamma(bundle, spec_, base_set_, grid_, pcfg_, sub_opts_);
          check_status(hat);
          append_status(rec, hat.status);
          rec.max_certified_gap = std::max(rec.max_certified_gap, hat.certified_gap);
          rec.Gamma_hat = hat.objective;
          if (hat.objective < Gb) {
            rec.step3_executed = true;
            while (cand.Gamma - Gb > scfg_.eta1 * (rec.Gamma_hat - Gb)) cand = raise(bundle, cp, rec);
          } else {
            rec.penalty_term_critical = true;
            while (cand.Gamma > Gb + scfg_.eps_feas) cand = raise(bundle, cp, rec);
          }
        }
        while (true) {
          const double q_base = omega_base + cp * Gb;
          const bool decay = cand.Q(cp) - q_base <= cp * scfg_.eta2 * (cand.Gamma - Gb);
          const bool infeas_decay = !scfg_.check_assumption5 || !rec.step3_executed ||
                                    cand.Gamma - Gb <= scfg_.eta1 * (rec.Gamma_hat - Gb);
          if (decay && infeas_decay) break;
          cand = raise(bundle, cp, rec);
        }
      } catch (const CMaxHit&) {
        hit_cap = true;
      }
      if (hit_cap) {
        rec.c_next = cp;
        finish_without_step(rec, traj, c);
        emit(summary, rec, observer);
        summary.termination = Termination::kCMaxHit;
        break;
      }

      const double c_next = cp;
      rec.c_next = c_next;
      rec.Gamma_cand = cand.Gamma;
      rec.Q_base = omega_base + c_next * Gb;
      rec.Q_cand = cand.Q(c_next);

      // Step 5
      const DiscreteTrajectory diff = cand.traj - traj;
      const double rho_sq = l2_norm_sq(diff, grid_);
      rec.rho = std::sqrt(rho_sq);
      nu_history.k = k;
      nu_history.rho_sq = rho_sq;
      const NuChoice nu = choose_nu(scfg_.nu, nu_history);
      rec.nu = nu.nu;
      rec.nu_fallback = nu.fallback;
      trial_history.k = k;
      rec.alpha_bar = admissible ? choose_trial_step(scfg_.trial, trial_history) : 0.0;

      const double Phi_cand = phi_total(cand.traj, c_next);
      DiscreteTrajectory next = cand.traj;
      rec.alpha = 0.0;
      rec.j = 0;
      if (rec.alpha_bar > 0.0 && rho_sq > 0.0) {
        bool accepted = false;
        double a = rec.alpha_bar;
        for (int j = 0; j <= scfg_.line_search_max_j; ++j, a *= scfg_.zeta) {
          DiscreteTrajectory trial = cand.traj + diff.scaled(a);
          const double Phi_trial = phi_total(trial, c_next);
          if (Phi_trial - Phi_cand <= -scfg_.sigma * a * a * rho_sq + rec.nu) {
            rec.alpha = a;
            rec.j = j;
            next = std::move(trial);
            accepted = true;
            break;
          }
        }
        if (!accepted) {
          rec.line_search_capped = true;
          rec.j = scfg_.line_search_max_j;
        }
      }
      trial_history.steps.emplace_back(rec.alpha_bar, rec.alpha);

      rec.Phi_base = phi_total(traj, c_next);
      rec.Phi_next = rec.alpha == 0.0 ? Phi_cand : phi_total(next, c_next);
      rec.J_next = eval_J(next, spec_, grid_);
      rec.phi_next = eval_phi(next, spec_, grid_, pcfg_);

      nu_history.previous_nu = rec.nu;
      nu_history.previous_decrease = rec.Phi_base - rec.Phi_next;

      const StoppingValues sv{rec.Phi_next, rec.Phi_base, rec.phi_next, rec.Q_base,
                              rec.Q_cand,   rec.Gamma_cand, rec.rho};
      const bool stop = check_stopping(scfg_.stopping, sv, scfg_.eps_f, scfg_.eps_phi, scfg_.eps_x);
      rec.assumption2_triggered = cand.replaced;

      traj = std::move(next);
      c = c_next;
      emit(summary, rec, observer);
      if (stop) {
        summary.termination = Termination::kConverged;
        break;
      }
      if (cand.replaced) {
        summary.termination = Termination::kAssumption2Critical;
        break;
      }
    }

    summary.traj = traj;
    summary.c = c;
    summary.J = eval_J(traj, spec_, grid_);
    summary.phi = eval_phi(traj, spec_, grid_, pcfg_);
    summary.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
  }

 private:
  struct Candidate {
    DiscreteTrajectory traj;
    double omega = 0.0;
    double Gamma = 0.0;
    bool replaced = false;
    double Q(double c) const { return omega + c * Gamma; }
  };

  double phi_total(const DiscreteTrajectory& t, double c) const {
    const double v = eval_Phi(t, spec_, grid_, pcfg_, c);
    if (!std::isfinite(v)) throw std::runtime_error(fmt::format("penalty function is not finite (c = {})", c));
    return v;
  }

  static void check_status(const SubproblemResult& r) {
    if (r.status == SubproblemStatus::kInfeasibleBaseSet)
      throw std::runtime_error("subproblem reported an infeasible base set");
  }

  static void append_status(IterationRecord& rec, SubproblemStatus s) {
    if (!rec.statuses.empty()) rec.statuses += '|';
    rec.statuses += status_name(s);
  }

  Candidate solve_q(const SubgradientBundle& bundle, double c, IterationRecord& rec) {
    SubproblemResult r = solve_Q(bundle, spec_, base_set_, grid_, pcfg_, c, sub_opts_);
    check_status(r);
    ++rec.inner_Q_solves;
    append_status(rec, r.status);
    rec.max_certified_gap = std::max(rec.max_certified_gap, r.certified_gap);
    Candidate cand;
    cand.omega = eval_omega(r.traj, bundle, spec_, grid_);
    cand.Gamma = eval_Gamma(r.traj, bundle, spec_, grid_, pcfg_);
    cand.replaced = r.replaced_by_base;
    cand.traj = std::move(r.traj);
    return cand;
  }

  Candidate raise(const SubgradientBundle& bundle, double& cp, IterationRecord& rec) {
    const double next = cp * pcfg_.rho;
    if (next > pcfg_.c_max * (1.0 + 1e-12)) {
      cp = next;
      throw CMaxHit{};
    }
    cp = next;
    ++rec.penalty_increases;
    return solve_q(bundle, cp, rec);
  }

  void finish_without_step(IterationRecord& rec, const DiscreteTrajectory& traj, double c) {
    const double Phi = phi_total(traj, c);
    rec.Phi_base = Phi;
    rec.Phi_next = Phi;
    rec.J_next = eval_J(traj, spec_, grid_);
    rec.phi_next = eval_phi(traj, spec_, grid_, pcfg_);
  }

  static void emit(RunSummary& summary, const IterationRecord& rec, const IterationObserver& observer) {
    summary.iterations = rec.k + 1;
    summary.total_inner_solves += rec.inner_Q_solves;
    summary.penalty_increases += rec.penalty_increases;
    summary.records.push_back(rec);
    if (observer) observer(rec);
  }

  const ProblemSpec& spec_;
  const X0Spec& base_set_;
  const Grid& grid_;
  const PenaltyConfig& pcfg_;
  const SolverConfig& scfg_;
  SubsolverOptions sub_opts_;
};

}  // namespace

RunSummary run(const ProblemSpec& spec, const X0Spec& base_set, const Grid& grid, const PenaltyConfig& pcfg,
               const SolverConfig& scfg, const DiscreteTrajectory& initial, const IterationObserver& observer) {
  pcfg.check();
  scfg.check();
  const auto errors = validate(spec, base_set);
  if (!errors.empty()) throw std::invalid_argument(errors.front());
  check_grid(spec, base_set, grid);
  check_shape(initial, spec.n, spec.m, grid);
  Runner runner(spec, base_set, grid, pcfg, scfg);
  return runner.run(initial, observer);
}

void write_iteration_csv_header(std::ostream& out) {
  out << "k,c_k,c_next,Phi_base,Phi_next,J,phi,Gamma_base,Gamma_cand,Gamma_hat,Q_base,Q_cand,rho,alpha_bar,"
         "alpha,j,nu,inner_Q_solves,penalty_increases,step2,step3,penalty_term_critical,assumption2,"
         "line_search_capped,nu_fallback,eps_k,max_certified_gap,statuses\n";
}

void write_iteration_csv_row(std::ostream& out, const IterationRecord& r) {
  const auto b = [](bool v) { return v ? "1" : "0"; };
  out << r.k << ',' << fmt_double(r.c_k) << ',' << fmt_double(r.c_next) << ',' << fmt_double(r.Phi_base) << ','
      << fmt_double(r.Phi_next) << ',' << fmt_double(r.J_next) << ',' << fmt_double(r.phi_next) << ','
      << fmt_double(r.Gamma_base) << ',' << fmt_double(r.Gamma_cand) << ',' << fmt_double(r.Gamma_hat) << ','
      << fmt_double(r.Q_base) << ',' << fmt_double(r.Q_cand) << ',' << fmt_double(r.rho) << ','
      << fmt_double(r.alpha_bar) << ',' << fmt_double(r.alpha) << ',' << r.j << ',' << fmt_double(r.nu) << ','
      << r.inner_Q_solves << ',' << r.penalty_increases << ',' << b(r.step2_executed) << ','
      << b(r.step3_executed) << ',' << b(r.penalty_term_critical) << ',' << b(r.assumption2_triggered) << ','
      << b(r.line_search_capped) << ',' << b(r.nu_fallback) << ',' << fmt_double(r.eps_k) << ','
      << fmt_double(r.max_certified_gap) << ',' << r.statuses << '\n';
}

nlohmann::json to_json(const RunSummary& summary, bool include_wall_time) {
  nlohmann::json doc;
  doc["termination"] = termination_name(summary.termination);
  doc["iterations"] = summary.iterations;
  doc["c"] = summary.c;
  doc["J"] = summary.J;
  doc["phi"] = summary.phi;
  doc["total_inner_solves"] = summary.total_inner_solves;
  doc["penalty_increases"] = summary.penalty_increases;
  if (include_wall_time) doc["wall_time"] = summary.wall_time;
  return doc;
}

}  // namespace bstep
