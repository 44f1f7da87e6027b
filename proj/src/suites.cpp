#include "polylab/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "polylab/atoms.hpp"
#include "polylab/dp.hpp"
#include "polylab/fenergy.hpp"
#include "polylab/parallel.hpp"
#include "polylab/simplex.hpp"

namespace polylab::suites {

using env::EnvField;
using env::EnvSpec;

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <class... Args>
std::string format(const char* fmt, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Check named(std::string id) {
  Check c;
  c.id = std::move(id);
  return c;
}

double unit(std::uint64_t h, std::uint64_t slot) { return to_unit_open(mix_key(h, slot)); }

EnvSpec random_spec(std::uint64_t h) {
  const double u1 = unit(h, 1), u2 = unit(h, 2), u3 = unit(h, 3);
  switch (mix_key(h, 0) % 5) {
    case 0: return EnvSpec::gaussian(2 * u1 - 1, 0.2 + 1.8 * u2);
    case 1: {
      const double rate = 0.5 + 2.5 * u1;
      return EnvSpec::exponential(rate, -1 / rate);
    }
    case 2: return EnvSpec::pareto(2.5 + 3.5 * u1);
    case 3: return EnvSpec::bernoulli(0.1 + 0.8 * u1, 2 * u2, -2 * u3);
    default: {
      const double lo = -2 * u1;
      return EnvSpec::uniform(lo, lo + 0.5 + 2.5 * u2);
    }
  }
}

std::uint64_t instance_key(std::uint64_t seed, int k) {
  return mix_key(mix_key(stream::kInstances, seed), static_cast<std::uint64_t>(k));
}

double max_nu_error(const LatticeSlice& nu, const std::map<Site, double>& want) {
  double err = 0.0;
  for (const auto& [x, v] : want) err = std::max(err, std::abs(nu.at(x) - v));
  nu.for_each([&](const Site& x, double v) {
    if (!want.count(x)) err = std::max(err, v);
  });
  return err;
}

template <class F>
void for_each_cone_site(int n, int d, F&& f) {
  for (int j = 1; j <= n; ++j) {
    const int r1 = d >= 2 ? j : 0, r2 = d >= 3 ? j : 0;
    for (int a = -j; a <= j; ++a)
      for (int b = -r1; b <= r1; ++b)
        for (int c = -r2; c <= r2; ++c) {
          const Site x{a, b, c};
          if (reachable(j, x)) f(j, x);
        }
  }
}

double median_abs_eta(const EnvField& f, int n, int d) {
  std::vector<double> v;
  for_each_cone_site(n, d, [&](int j, const Site& x) { v.push_back(std::abs(f.eta(j, x))); });
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

nlohmann::json to_json(const Check& c) {
  return {{"id", c.id},         {"pass", c.pass},     {"value", c.value},
          {"threshold", c.threshold}, {"detail", c.detail}, {"seconds", c.seconds}};
}

OracleInstance oracle_instance(std::uint64_t seed, int k) {
  const std::uint64_t h = instance_key(seed, k);
  OracleInstance inst;
  inst.spec = random_spec(mix_key(h, 10));
  inst.d = 1 + k % 2;
  const int cap = inst.d == 1 ? 12 : 8;
  inst.n = 1 + static_cast<int>(mix_key(h, 11) % static_cast<std::uint64_t>(cap));
  inst.beta = 3.0 * unit(h, 12);
  inst.seed = mix_key(h, 13);
  return inst;
}

OracleOutcome compare_with_oracle(const OracleInstance& inst) {
  const EnvField f(inst.spec, inst.seed, 0);
  const auto o = dp::brute_force_oracle(f, inst.beta, inst.n, inst.d);
  OracleOutcome out;
  const auto st = dp::evolve(f, inst.beta, inst.n, inst.d, [&](const dp::StepView& v) {
    out.nu_error = std::max(out.nu_error, max_nu_error(v.nu, o.nu[static_cast<std::size_t>(v.j - 1)]));
  });
  out.log_z_error = std::abs(st.log_z - o.log_z);
  out.max_energy_error = std::abs(dp::max_path_energy(f, inst.n, inst.d).max_energy - o.max_energy);
  return out;
}

Check oracle_equivalence(int instances, std::uint64_t seed) {
  Timer t;
  double worst_z = 0.0, worst_nu = 0.0, worst_n = 0.0;
  for (int k = 0; k < instances; ++k) {
    const auto o = compare_with_oracle(oracle_instance(seed, k));
    worst_z = std::max(worst_z, o.log_z_error);
    worst_nu = std::max(worst_nu, o.nu_error);
    worst_n = std::max(worst_n, o.max_energy_error);
  }
  Check c = named("oracle.equivalence");
  c.seconds = t.seconds();
  c.value = worst_z;
  c.threshold = 1e-10;
  c.pass = worst_z <= 1e-10 && worst_nu <= 1e-12 && worst_n <= 1e-10 && c.seconds < 60;
  c.detail = format("%d instances, max |logZ err| %.3g, max |nu err| %.3g, max |N err| %.3g, %.1f s (limit 60 s)",
                    instances, worst_z, worst_nu, worst_n, c.seconds);
  return c;
}

Check worked_example() {
  Timer t;
  env::TableField f(0.0);
  f.set(1, Site{1, 0, 0}, std::log(2.0));
  double rho1 = 0.0, nu2_center = 0.0;
  const auto st = dp::evolve(f, 1.0, 2, 1, [&](const dp::StepView& v) {
    if (v.j == 1) rho1 = v.rho.at(Site{1, 0, 0});
    if (v.j == 2) nu2_center = v.nu.at(Site{0, 0, 0});
  });
  const auto o = dp::brute_force_oracle(f, 1.0, 2, 1);
  const double want = std::log(1.5);
  const double n2 = dp::max_path_energy(f, 2, 1).max_energy;
  Check c = named("oracle.worked_example");
  c.value = st.log_z;
  c.threshold = want;
  c.pass = std::abs(st.log_z - want) <= 1e-12 && std::abs(o.log_z - want) <= 1e-12 &&
           std::abs(rho1 - 2.0 / 3.0) <= 1e-12 && std::abs(nu2_center - 0.5) <= 1e-12 &&
           std::abs(n2 - std::log(2.0)) <= 1e-12;
  c.detail = format("logZ_2 %.12f (want ln 1.5 = %.12f), oracle %.12f, rho_1(1) %.12f, nu_2(0) %.6f, N(2) %.12f",
                    st.log_z, want, o.log_z, rho1, nu2_center, n2);
  c.seconds = t.seconds();
  return c;
}

Check pathwise_bound(int instances, std::uint64_t seed, int threads) {
  Timer t;
  const auto excess = parallel_map(static_cast<std::size_t>(instances), threads, [&](std::size_t k) {
    const std::uint64_t h = instance_key(seed, static_cast<int>(k));
    const int d = 1 + static_cast<int>(k % 3);
    const int n = 1 + static_cast<int>(mix_key(h, 11) % (d == 3 ? 30u : 60u));
    const double beta = 4.0 * unit(h, 12);
    const EnvField f(random_spec(mix_key(h, 10)), mix_key(h, 13), 0);
    return dp::evolve(f, beta, n, d).log_z - beta * dp::max_path_energy(f, n, d).max_energy;
  });
  int violations = 0;
  double worst = -kInf;
  for (double e : excess) {
    violations += e > 1e-9;
    worst = std::max(worst, e);
  }
  Check c = named("bounds.pathwise");
  c.value = worst;
  c.threshold = 1e-9;
  c.pass = violations == 0 && instances >= 1;
  c.detail = format("%d instances, %d with ln Z_n > beta N(n) + 1e-9, max excess %.3g", instances, violations, worst);
  c.seconds = t.seconds();
  return c;
}

Check truncation_estimate(int instances, std::uint64_t seed, int threads) {
  Timer t;
  static constexpr double kLevels[] = {0.5, 1.0, 2.0, 4.0, 8.0};
  struct Outcome {
    double worst_excess = -kInf;
    bool monotone = true;
  };
  const auto outcomes = parallel_map(static_cast<std::size_t>(instances), threads, [&](std::size_t k) {
    const std::uint64_t h = instance_key(seed, static_cast<int>(k));
    const int d = 1 + static_cast<int>(k % 3);
    const int n = d == 3 ? 12 : 40;
    const double beta = 0.25 + 1.75 * unit(h, 12);
    const EnvField f(random_spec(mix_key(h, 10)), mix_key(h, 13), 0);
    const double log_z = dp::evolve(f, beta, n, d).log_z;
    const double median = median_abs_eta(f, n, d);
    Outcome o;
    double prev = kInf;
    for (double level : kLevels) {
      const double gap = std::abs(log_z - dp::truncated_evolve(f, beta, n, d, level).log_z);
      const double rhs = beta * dp::max_path_energy(f, n, d, dp::excess_over(level)).max_energy;
      o.worst_excess = std::max(o.worst_excess, gap - rhs);
      if (level > median) {
        if (gap > prev + 1e-12) o.monotone = false;
        prev = gap;
      }
    }
    return o;
  });
  double worst = -kInf;
  int nonmonotone = 0;
  for (const auto& o : outcomes) {
    worst = std::max(worst, o.worst_excess);
    nonmonotone += !o.monotone;
  }
  Check c = named("bounds.truncation");
  c.value = worst;
  c.threshold = 1e-9;
  c.pass = worst <= 1e-9 && nonmonotone == 0;
  c.detail = format(
      "%d instances x 5 levels, max(|logZ - logZ_L| - beta N_L) %.3g, %d instances with gaps rising above the median "
      "|eta|",
      instances, worst, nonmonotone);
  c.seconds = t.seconds();
  return c;
}

Check annealed_bound(int threads) {
  Timer t;
  const EnvSpec spec = EnvSpec::gaussian();
  const std::vector<double> betas{0.5, 1.0};
  bool ok = true;
  double worst = -kInf;
  std::string cells;
  for (int d = 1; d <= 3; ++d) {
    fenergy::RunOptions opt;
    opt.threads = threads;
    opt.prune_ratio = d == 1 ? 0.0 : d == 2 ? 1e-8 : 1e-5;
    const auto scan = fenergy::gap_scan(spec, betas, 500, d, 64, 4000 + static_cast<std::uint64_t>(d), opt);
    for (std::size_t k = 0; k < betas.size(); ++k) {
      const auto& e = scan.estimates[k];
      const double margin = (e.mean - scan.lambda[k]) / std::max(e.std_error, 1e-300);
      worst = std::max(worst, margin);
      ok = ok && e.mean <= scan.lambda[k] + 2 * e.std_error;
      cells += format("%sd=%d b=%.1f p=%.5f+-%.5f lam=%.3f", cells.empty() ? "" : "; ", d, betas[k], e.mean,
                      e.std_error, scan.lambda[k]);
    }
  }
  Check c = named("bounds.annealed");
  c.seconds = t.seconds();
  c.value = worst;
  c.threshold = 2.0;
  c.pass = ok && c.seconds < 300;
  c.detail = cells + format("; max (p-lambda)/se %.2f, %.0f s (limit 300 s)", worst, c.seconds);
  return c;
}

Check gap_monotonicity(int threads) {
  Timer t;
  fenergy::RunOptions opt;
  opt.threads = threads;
  const auto scan = fenergy::gap_scan(EnvSpec::gaussian(), {0.25, 0.5, 1.0, 2.0}, 1000, 1, 64, 5000, opt);
  const std::size_t last = scan.gap.size() - 1;
  const double z = scan.gap[last] / scan.gap_std_error[last];
  Check c = named("lemmas.gap_monotone");
  c.value = z;
  c.threshold = -2.0;
  c.pass = scan.monotone && z < -2.0;
  std::string gaps;
  for (std::size_t k = 0; k < scan.gap.size(); ++k)
    gaps += format("%s%.5f+-%.5f", k ? ", " : "", scan.gap[k], scan.gap_std_error[k]);
  c.detail = format("gaps [%s], monotone %s, gap(2)/se %.1f", gaps.c_str(), scan.monotone ? "yes" : "no", z);
  c.seconds = t.seconds();
  return c;
}

Check simplex_minimizers(int threads) {
  Timer t;
  using simplex::ConstraintSet;
  const EnvSpec spec = EnvSpec::exponential(1.0, -1.0);
  const std::vector<ConstraintSet> sets{ConstraintSet::atom_mass(0.1, 0.8, 6), ConstraintSet::atom_mass(0.05, 0.9, 6),
                                        ConstraintSet::cap(4, 8), ConstraintSet::cap(10, 20)};
  bool ok = true;
  double worst_l1 = 0.0;
  int beats = 0;
  std::string parts;
  for (const auto& set : sets) {
    const simplex::SampleBank bank(spec, 1.0, 100000, set.n(), 77);
    const auto closed = simplex::closed_form_minimizer(set);
    const auto fc = simplex::mc_objective(closed, bank);
    const auto values = parallel_map(200, threads, [&](std::size_t k) {
      return simplex::mc_objective(simplex::random_feasible_point(set, 5, k + 1), bank);
    });
    int local_beats = 0;
    for (const auto& f : values)
      local_beats += fc.estimate - f.estimate > 3 * std::hypot(fc.std_error, f.std_error);
    const auto m = simplex::constrained_minimize(set, bank, 4, 9, threads);
    const double l1 = simplex::l1_distance_up_to_permutation(m.point, closed);
    worst_l1 = std::max(worst_l1, l1);
    beats += local_beats;
    ok = ok && local_beats == 0 && l1 <= 0.05;
    parts += format("%sn=%d closed %.5f min %.5f l1 %.4f beats %d", parts.empty() ? "" : "; ", set.n(), fc.estimate,
                    m.value.estimate, l1, local_beats);
  }
  Check c = named("lemmas.simplex_minimizers");
  c.seconds = t.seconds();
  c.value = worst_l1;
  c.threshold = 0.05;
  c.pass = ok && c.seconds < 180;
  c.detail = parts + format("; %.0f s (limit 180 s)", c.seconds);
  return c;
}

Check utile_convergence(int threads) {
  Timer t;
  const auto table = simplex::lemma_utile_check(EnvSpec::gaussian(), 0.5, 2.0, {10, 100, 1000, 10000}, 100000, 3,
                                                threads);
  const auto& last = table.rows.back();
  const double tolerance = 3 * last.std_error + 0.01;
  Check c = named("lemmas.utile_convergence");
  c.value = last.value;
  c.threshold = table.limit;
  c.pass = std::abs(last.value - table.limit) <= tolerance && table.nondecreasing && std::abs(table.limit - 0.125) < 1e-9;
  std::string rows;
  for (const auto& r : table.rows) rows += format("%sn=%d %.5f+-%.5f", rows.empty() ? "" : ", ", r.n, r.value, r.std_error);
  c.detail = format("%s; limit %.6f, |last - limit| %.5f <= %.5f, nondecreasing %s", rows.c_str(), table.limit,
                    std::abs(last.value - table.limit), tolerance, table.nondecreasing ? "yes" : "no");
  c.seconds = t.seconds();
  return c;
}

Check condition_examples() {
  Timer t;
  int failed = 0;
  std::string notes;
  const auto expect = [&](bool cond, const char* what) {
    if (!cond) {
      ++failed;
      notes += notes.empty() ? what : std::string(", ") + what;
    }
  };
  expect(!env::check_conditions(EnvSpec::pareto(1.5), 1).hyp1, "pareto(1.5) d=1 hyp1");
  expect(env::check_conditions(EnvSpec::pareto(4.0), 1).hyp1, "pareto(4) d=1 hyp1");
  const auto e = env::check_conditions(EnvSpec::exponential(1.0), 2);
  expect(e.hyp1 && e.hyp2 && e.hyp3 && e.explodes, "exponential(1) d=2 flags");
  expect(fenergy::lemma_dec_conditions(EnvSpec::exponential(1.0), 1).finite_radius_holds, "exponential(1) finite R");
  expect(fenergy::lemma_dec_conditions(EnvSpec::bernoulli(0.4), 1).guaranteed, "bernoulli(0.4) d=1");
  const auto b9 = fenergy::lemma_dec_conditions(EnvSpec::bernoulli(0.9), 1);
  expect(b9.infinite_radius_fails && b9.verdict == "inconclusive", "bernoulli(0.9) d=1");
  Check c = named("lemmas.conditions");
  c.value = failed;
  c.threshold = 0;
  c.pass = failed == 0;
  c.detail = failed == 0 ? "6 analytic condition examples agree" : "mismatch: " + notes;
  c.seconds = t.seconds();
  return c;
}

namespace {

// Cesaro atom mass for pareto(4), d=1, n=1000 over 32 replicas at each beta.
std::vector<RunningStats> atom_mass_by_beta(const atoms::EpsSchedule& schedule, const std::vector<double>& betas,
                                            int threads) {
  constexpr int kReplicas = 32;
  const auto masses = parallel_map(betas.size() * kReplicas, threads, [&](std::size_t i) {
    const EnvField f(EnvSpec::pareto(4.0), 8000, i % kReplicas);
    atoms::LocalizationTracker tracker({schedule}, 0.5);
    dp::evolve(f, betas[i / kReplicas], 1000, 1, [&](const dp::StepView& v) { tracker(v); });
    return tracker.traces()[0].atom_mass();
  });
  std::vector<RunningStats> stats(betas.size());
  for (std::size_t i = 0; i < masses.size(); ++i) stats[i / kReplicas].add(masses[i]);
  return stats;
}

std::string describe_stats(const std::vector<double>& betas, const std::vector<RunningStats>& stats) {
  std::string parts;
  for (std::size_t k = 0; k < betas.size(); ++k)
    parts += format("%sbeta=%g %.4f+-%.4f", k ? ", " : "", betas[k], stats[k].mean(), stats[k].std_error());
  return parts;
}

}  // namespace

Check localization_trend(int threads) {
  Timer t;
  const std::vector<double> betas{1.0, 2.0, 4.0, 8.0};
  const auto stats = atom_mass_by_beta(atoms::EpsSchedule::fixed(0.05), betas, threads);
  bool increasing = true;
  for (std::size_t k = 1; k < betas.size(); ++k)
    increasing = increasing && stats[k].mean() - stats[k - 1].mean() >
                                   2 * std::hypot(stats[k].std_error(), stats[k - 1].std_error());
  Check c = named("localization.trend");
  c.value = stats.back().mean();
  c.threshold = kLocalizationFloor;
  c.pass = increasing && c.value >= kLocalizationFloor;
  c.detail = format("eps=0.05: %s; increasing %s, beta=8 floor %.4f", describe_stats(betas, stats).c_str(),
                    increasing ? "yes" : "no", kLocalizationFloor);
  c.seconds = t.seconds();
  return c;
}

Check purely_atomic_trend(int threads) {
  Timer t;
  const std::vector<double> betas{1.0, 2.0, 4.0, 8.0};
  const auto stats = atom_mass_by_beta(atoms::EpsSchedule::inv_log(1.0), betas, threads);
  bool nondecreasing = true;
  for (std::size_t k = 1; k < betas.size(); ++k)
    nondecreasing = nondecreasing && stats[k].mean() >= stats[k - 1].mean() -
                                                            2 * std::hypot(stats[k].std_error(), stats[k - 1].std_error());
  Check c = named("localization.purely_atomic");
  c.value = stats.back().mean();
  c.threshold = kPurelyAtomicFloor;
  c.pass = nondecreasing && c.value >= kPurelyAtomicFloor;
  c.detail = format("eps_j = 1/ln(j+2): %s; nondecreasing %s, beta=8 floor %.4f", describe_stats(betas, stats).c_str(),
                    nondecreasing ? "yes" : "no", kPurelyAtomicFloor);
  c.seconds = t.seconds();
  return c;
}

Check martingale_lln(int threads) {
  Timer t;
  constexpr int kReplicas = 16;
  const auto traces = parallel_map(kReplicas, threads, [&](std::size_t r) {
    return fenergy::martingale_diagnostic(EnvSpec::gaussian(), 2.0, 0.1, 0.8, 1000, 1, 200, 9000, r);
  });
  const auto summarize = [&](int n, double& se, double& mc) {
    RunningStats s;
    double mc2 = 0.0;
    for (const auto& tr : traces) {
      const auto& p = tr.points[static_cast<std::size_t>(n - 1)];
      s.add(std::abs(p.m_over_n));
      mc2 += p.m_mc_error * p.m_mc_error;
    }
    se = s.std_error();
    mc = std::sqrt(mc2) / kReplicas;
    return s.mean();
  };
  double se100, mc100, se1000, mc1000;
  const double a = summarize(100, se100, mc100);
  const double b = summarize(1000, se1000, mc1000);
  const double pooled = std::sqrt(se100 * se100 + se1000 * se1000 + mc100 * mc100 + mc1000 * mc1000);
  Check c = named("localization.martingale");
  c.value = a - b;
  c.threshold = 2 * pooled;
  c.pass = a - b > 2 * pooled;
  c.detail = format("mean |M_n/n|: n=100 %.5f (se %.5f, mc %.5f), n=1000 %.5f (se %.5f, mc %.5f); drop %.5f vs 2x "
                    "pooled %.5f",
                    a, se100, mc100, b, se1000, mc1000, a - b, 2 * pooled);
  c.seconds = t.seconds();
  return c;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"oracle", "bounds", "lemmas", "localization", "all"};
  return names;
}

std::vector<Check> run_suite(const std::string& name, int threads) {
  std::vector<std::function<Check()>> steps;
  const bool all = name == "all";
  if (all || name == "oracle") {
    steps.push_back([] { return worked_example(); });
    steps.push_back([] { return oracle_equivalence(); });
  }
  if (all || name == "bounds") {
    steps.push_back([=] { return pathwise_bound(10000, 2, threads); });
    steps.push_back([=] { return truncation_estimate(200, 3, threads); });
    steps.push_back([=] { return annealed_bound(threads); });
  }
  if (all || name == "lemmas") {
    steps.push_back([] { return condition_examples(); });
    steps.push_back([=] { return gap_monotonicity(threads); });
    steps.push_back([=] { return simplex_minimizers(threads); });
    steps.push_back([=] { return utile_convergence(threads); });
  }
  if (all || name == "localization") {
    steps.push_back([=] { return localization_trend(threads); });
    steps.push_back([=] { return purely_atomic_trend(threads); });
    steps.push_back([=] { return martingale_lln(threads); });
  }
  if (steps.empty()) throw ConfigError("unknown suite '" + name + "' (oracle, bounds, lemmas, localization, all)");
  std::vector<Check> out;
  for (const auto& s : steps) out.push_back(s());
  return out;
}

}  // namespace polylab::suites
