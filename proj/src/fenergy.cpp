#include "polylab/fenergy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "polylab/atoms.hpp"
#include "polylab/parallel.hpp"

namespace polylab::fenergy {

namespace {

constexpr double kMaxBeta = 1e6;

void check_common(const env::EnvSpec& spec, int n, int d, int replicas) {
  spec.validate();
  if (d < 1 || d > 3) throw ConfigError("dimension must be 1, 2 or 3");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (replicas < 2) throw ConfigError("at least 2 replicas are needed for a standard error");
}

void check_beta(double beta) {
  if (!(beta >= 0 && beta <= kMaxBeta)) throw ConfigError("beta must lie in [0, 1e6]");
}

dp::EvolveOptions evolve_options(const RunOptions& o) {
  dp::EvolveOptions e;
  e.prune_ratio = o.prune_ratio;
  e.memory_budget = o.memory_budget;
  return e;
}

struct ReplicaRun {
  double log_z_per_step = 0.0;
  double max_energy = 0.0;
};

ReplicaRun run_replica(const env::EnvSpec& spec, double beta, int n, int d, std::uint64_t seed, std::uint64_t replica,
                       const RunOptions& options, bool with_path_max) {
  const env::EnvField field(spec, seed, replica);
  ReplicaRun r;
  r.log_z_per_step = dp::evolve(field, beta, n, d, {}, evolve_options(options)).log_z / n;
  if (with_path_max) r.max_energy = dp::max_path_energy(field, n, d, {}, false, options.memory_budget).max_energy;
  return r;
}

FreeEnergyEstimate aggregate(const env::EnvSpec& spec, double beta, int n, int d, std::uint64_t seed,
                             const std::vector<ReplicaRun>& runs, bool with_path_max) {
  FreeEnergyEstimate e;
  e.spec = spec;
  e.beta = beta;
  e.n = n;
  e.d = d;
  e.replicas = static_cast<int>(runs.size());
  e.seed = seed;
  RunningStats stats;
  for (const auto& r : runs) {
    stats.add(r.log_z_per_step);
    e.per_replica.push_back(r.log_z_per_step);
    if (with_path_max) e.per_replica_max.push_back(r.max_energy);
  }
  e.mean = stats.mean();
  e.std_error = stats.std_error();
  if (!std::isfinite(e.mean)) throw NumericError("free energy estimate is not finite");
  return e;
}

}  // namespace

FreeEnergyEstimate estimate_p(const env::EnvSpec& spec, double beta, int n, int d, int replicas, std::uint64_t seed,
                              const RunOptions& options, bool with_path_max) {
  check_common(spec, n, d, replicas);
  check_beta(beta);
  const auto runs = parallel_map(static_cast<std::size_t>(replicas), options.threads, [&](std::size_t r) {
    return run_replica(spec, beta, n, d, seed, r, options, with_path_max);
  });
  return aggregate(spec, beta, n, d, seed, runs, with_path_max);
}

int pathwise_violations(const FreeEnergyEstimate& est, double slack) {
  if (est.per_replica_max.size() != est.per_replica.size())
    throw ConfigError("estimate was computed without path maxima");
  int bad = 0;
  for (std::size_t r = 0; r < est.per_replica.size(); ++r)
    if (est.per_replica[r] * est.n > est.beta * est.per_replica_max[r] + slack) ++bad;
  return bad;
}

AlphaEstimate estimate_alpha(const env::EnvSpec& spec, const std::vector<int>& n_list, int d, int replicas,
                             std::uint64_t seed, const RunOptions& options) {
  if (n_list.empty()) throw ConfigError("n_list is empty");
  for (std::size_t k = 1; k < n_list.size(); ++k)
    if (n_list[k] <= n_list[k - 1]) throw ConfigError("n_list must be strictly increasing");
  check_common(spec, n_list.front(), d, replicas);
  const int n_max = n_list.back();

  const auto prefixes = parallel_map(static_cast<std::size_t>(replicas), options.threads, [&](std::size_t r) {
    const env::EnvField field(spec, seed, r);
    const auto stats = dp::max_path_energy(field, n_max, d, {}, false, options.memory_budget);
    std::vector<double> out;
    for (int n : n_list) out.push_back(stats.prefix_max[static_cast<std::size_t>(n - 1)] / n);
    return out;
  });

  AlphaEstimate a;
  a.spec = spec;
  a.d = d;
  a.replicas = replicas;
  a.seed = seed;
  a.n_list = n_list;
  for (std::size_t k = 0; k < n_list.size(); ++k) {
    RunningStats s;
    for (const auto& p : prefixes) s.add(p[k]);
    a.means.push_back(s.mean());
    a.std_errors.push_back(s.std_error());
  }
  for (const auto& p : prefixes) a.per_replica.push_back(p.back());
  a.mean = a.means.back();
  a.std_error = a.std_errors.back();
  for (std::size_t k = 1; k < n_list.size(); ++k) {
    const double pooled = std::hypot(a.std_errors[k], a.std_errors[k - 1]);
    if (a.means[k] < a.means[k - 1] - 2 * pooled) a.superadditive = false;
  }
  return a;
}

BoundReport bound_check(const FreeEnergyEstimate& p, const AlphaEstimate& alpha, double lambda) {
  if (!(p.spec == alpha.spec)) throw ConfigError("free energy and alpha estimates use different environments");
  if (p.d != alpha.d) throw ConfigError("free energy and alpha estimates use different dimensions");
  if (std::isnan(lambda)) throw ConfigError("lambda is NaN");

  BoundReport b;
  b.p_hat = p.mean;
  b.p_std_error = p.std_error;
  b.alpha_upper = alpha.mean + 2 * alpha.std_error;
  b.lambda = lambda;
  const double path_side = p.beta * b.alpha_upper;
  b.lambda_active = lambda <= path_side;
  b.bound = std::min(path_side, lambda);
  b.combined_std_error =
      b.lambda_active ? p.std_error : std::hypot(p.std_error, p.beta * alpha.std_error);
  b.pass = b.p_hat <= b.bound + 2 * b.combined_std_error;
  return b;
}

PhaseScan gap_scan(const env::EnvSpec& spec, const std::vector<double>& beta_grid, int n, int d, int replicas,
                   std::uint64_t seed, const RunOptions& options) {
  check_common(spec, n, d, replicas);
  if (beta_grid.empty()) throw ConfigError("beta grid is empty");
  const double radius = env::mgf_radius(spec);
  for (std::size_t k = 0; k < beta_grid.size(); ++k) {
    check_beta(beta_grid[k]);
    if (k > 0 && !(beta_grid[k] > beta_grid[k - 1])) throw ConfigError("beta grid must be strictly increasing");
    if (!(beta_grid[k] < radius))
      throw ConfigError("beta = " + std::to_string(beta_grid[k]) + " is not below the mgf radius " +
                        std::to_string(radius));
  }

  const std::size_t per_beta = static_cast<std::size_t>(replicas);
  const auto runs = parallel_map(beta_grid.size() * per_beta, options.threads, [&](std::size_t i) {
    return run_replica(spec, beta_grid[i / per_beta], n, d, seed, i % per_beta, options, false);
  });

  PhaseScan s;
  s.spec = spec;
  s.n = n;
  s.d = d;
  s.replicas = replicas;
  s.seed = seed;
  s.beta_grid = beta_grid;
  for (std::size_t k = 0; k < beta_grid.size(); ++k) {
    const std::vector<ReplicaRun> slice(runs.begin() + static_cast<std::ptrdiff_t>(k * per_beta),
                                        runs.begin() + static_cast<std::ptrdiff_t>((k + 1) * per_beta));
    s.estimates.push_back(aggregate(spec, beta_grid[k], n, d, seed, slice, false));
    s.lambda.push_back(env::log_mgf(spec, beta_grid[k]));
    s.gap.push_back(s.estimates.back().mean - s.lambda.back());
    s.gap_std_error.push_back(s.estimates.back().std_error);
  }
  for (std::size_t k = 0; k < beta_grid.size(); ++k) {
    if (!s.beta_c_bracket && std::abs(s.gap[k]) > 2 * s.gap_std_error[k])
      s.beta_c_bracket = std::make_pair(k == 0 ? 0.0 : beta_grid[k - 1], beta_grid[k]);
    if (k > 0 && s.gap[k] > s.gap[k - 1] + 2 * std::hypot(s.gap_std_error[k], s.gap_std_error[k - 1]))
      s.monotone = false;
  }
  return s;
}

PercolationThreshold shipped_pc(int d) {
  // Mean of estimate_pc over seeds 1..8 at default settings, +- 2 standard errors
  // widened to cover the seed spread (`polylab percolation`).
  switch (d) {
    case 1: return {1, 0.7064, 0.004};
    case 2: return {2, 0.3447, 0.002};
    case 3: return {3, 0.2086, 0.002};
    default: throw ConfigError("dimension must be 1, 2 or 3");
  }
}

std::vector<double> percolation_density(int d, double p, int width, int depth, std::uint64_t seed) {
  if (d < 1 || d > 3) throw ConfigError("dimension must be 1, 2 or 3");
  if (width < 4 || width % 2 != 0) throw ConfigError("percolation width must be even and >= 4");
  if (depth < 1) throw ConfigError("percolation depth must be >= 1");
  if (!(p >= 0 && p <= 1)) throw ConfigError("open probability must lie in [0, 1]");

  std::size_t cells = 1;
  for (int a = 0; a < d; ++a) cells *= static_cast<std::size_t>(width);
  std::vector<std::size_t> stride(static_cast<std::size_t>(d), 1);
  for (int a = 1; a < d; ++a) stride[static_cast<std::size_t>(a)] = stride[static_cast<std::size_t>(a - 1)] * width;

  std::vector<unsigned char> cur(cells, 1), next(cells);
  std::vector<double> density;
  density.reserve(static_cast<std::size_t>(depth));
  const std::uint64_t base = mix_key(mix_key(stream::kPercolation, seed), static_cast<std::uint64_t>(d));
  const std::size_t w = static_cast<std::size_t>(width);

  for (int t = 1; t <= depth; ++t) {
    const std::uint64_t layer = mix_key(base, static_cast<std::uint64_t>(t));
    std::size_t occupied = 0;
    for (std::size_t i = 0; i < cells; ++i) {
      bool fed = false;
      for (int a = 0; a < d && !fed; ++a) {
        const std::size_t s = stride[static_cast<std::size_t>(a)];
        const std::size_t coord = (i / s) % w;
        const std::size_t lo = coord == 0 ? i + (w - 1) * s : i - s;
        const std::size_t hi = coord == w - 1 ? i - (w - 1) * s : i + s;
        fed = cur[lo] || cur[hi];
      }
      const bool on = fed && to_unit_open(mix_key(layer, i)) < p;
      next[i] = on;
      occupied += on;
    }
    cur.swap(next);
    density.push_back(static_cast<double>(occupied) / static_cast<double>(cells));
  }
  return density;
}

PcEstimate estimate_pc(int d, const PcOptions& options) {
  if (d < 1 || d > 3) throw ConfigError("dimension must be 1, 2 or 3");
  const int width = options.width > 0 ? options.width : (d == 1 ? 20000 : d == 2 ? 320 : 48);
  const int depth = options.depth > 0 ? options.depth : (d == 1 ? 4000 : d == 2 ? 1500 : 400);
  if (depth < 8) throw ConfigError("percolation depth must be >= 8");
  if (options.iterations < 1) throw ConfigError("need at least one bisection step");

  // Supercritical runs bend upward on a log-log plot of the density decay,
  // subcritical ones bend downward.
  const auto slope = [](const std::vector<double>& rho, int from, int to) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int m = to - from + 1;
    for (int t = from; t <= to; ++t) {
      const double x = std::log(static_cast<double>(t)), y = std::log(rho[static_cast<std::size_t>(t - 1)]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
  };
  const auto supercritical = [&](double p) {
    const auto rho = percolation_density(d, p, width, depth, options.seed);
    if (rho.back() == 0.0) return false;
    const double early = slope(rho, depth / 16, depth / 4), late = slope(rho, depth / 4, depth);
    // Far above threshold the decay has stopped and both slopes are noise.
    return late > early || early > -0.02;
  };

  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < options.iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    (supercritical(mid) ? hi : lo) = mid;
  }
  return {d, 0.5 * (lo + hi), 0.5 * (hi - lo)};
}

DecConditionReport lemma_dec_conditions(const env::EnvSpec& spec, int d, const std::optional<AlphaEstimate>& alpha,
                                        std::optional<PercolationThreshold> pc) {
  spec.validate();
  if (d < 1 || d > 3) throw ConfigError("dimension must be 1, 2 or 3");
  if (alpha && (!(alpha->spec == spec) || alpha->d != d))
    throw ConfigError("alpha estimate belongs to a different environment or dimension");

  DecConditionReport r;
  r.radius = env::mgf_radius(spec);
  r.pc = pc ? *pc : shipped_pc(d);
  if (r.pc.d != d) throw ConfigError("percolation threshold is for a different dimension");
  if (alpha) r.alpha_upper = alpha->mean + 2 * alpha->std_error;

  if (r.radius > 0 && r.radius < kInf) {
    r.finite_radius_applies = true;
    r.lambda_at_radius_over_radius = env::log_mgf(spec, r.radius) / r.radius;
    // alpha is finite under the integrability hypotheses, so an infinite ratio settles it.
    r.finite_radius_holds = r.lambda_at_radius_over_radius == kInf ||
                            (alpha && r.alpha_upper < r.lambda_at_radius_over_radius);
  }
  if (r.radius == kInf) {
    r.infinite_radius_applies = true;
    r.mass_at_top = env::mass_at_esssup(spec);
    r.infinite_radius_holds = r.mass_at_top < r.pc.value - r.pc.uncertainty;
    r.infinite_radius_fails = r.mass_at_top > r.pc.value + r.pc.uncertainty;
  }
  r.guaranteed = r.finite_radius_holds || r.infinite_radius_holds;
  r.verdict = r.guaranteed ? "beta_c < R guaranteed" : "inconclusive";
  return r;
}

MartingaleTrace martingale_diagnostic(const env::EnvSpec& spec, double beta, double eps, double delta, int n, int d,
                                      int layer_samples, std::uint64_t seed, std::uint64_t replica,
                                      const RunOptions& options) {
  check_common(spec, n, d, 2);
  check_beta(beta);
  if (layer_samples < 100) throw ConfigError("martingale diagnostic needs at least 100 layer samples");
  const int pairs = (layer_samples + 1) / 2;
  const env::EnvField field(spec, seed, replica);
  const std::uint64_t resample_base = mix_key(mix_key(stream::kLayerResample, seed), replica);

  MartingaleTrace trace;
  trace.replica = replica;
  trace.points.reserve(static_cast<std::size_t>(n));
  double m_sum = 0.0, n_sum = 0.0, m_var = 0.0, n_var = 0.0;
  int events = 0;

  std::vector<Site> sites;
  std::vector<double> weight, u, a, b;

  const auto observer = [&](const dp::StepView& step) {
    const auto report = atoms::atom_report(step.nu, eps, delta);
    sites.clear();
    weight.clear();
    const double cutoff = 1e-18 * step.nu.max();
    step.nu.for_each([&](const Site& x, double v) {
      if (v > cutoff) {
        sites.push_back(x);
        weight.push_back(v);
      }
    });
    double total = 0.0;
    for (double v : weight) total += v;
    const double log_total = std::log(total);
    const std::size_t count = sites.size();
    u.resize(count);
    b.resize(count);

    const auto centered_log = [&](const std::vector<double>& eta) {
      double top = -kInf;
      for (double e : eta) top = std::max(top, beta * e);
      double s = 0.0;
      for (std::size_t k = 0; k < count; ++k) s += weight[k] * std::exp(beta * eta[k] - top);
      return top + std::log(s) - log_total;
    };

    const std::uint64_t layer = mix_key(resample_base, static_cast<std::uint64_t>(step.j));
    RunningStats draws;
    for (int p = 0; p < pairs; ++p) {
      const std::uint64_t key = mix_key(layer, static_cast<std::uint64_t>(p));
      for (std::size_t k = 0; k < count; ++k) {
        u[k] = to_unit_open(mix_key(key, pack_site(sites[k])));
        b[k] = 1.0 - u[k];
      }
      a = u;
      spec.quantile_in_place(a.data(), static_cast<int>(count));
      spec.quantile_in_place(b.data(), static_cast<int>(count));
      draws.add(0.5 * (centered_log(a) + centered_log(b)));
    }
    const double centered = step.increment - draws.mean();
    const double var = draws.std_error() * draws.std_error();
    if (report.event_mass_ge_delta) {
      n_sum += centered;
      n_var += var;
      ++events;
    } else {
      m_sum += centered;
      m_var += var;
    }
    MartingalePoint pt;
    pt.n = step.j;
    pt.m_over_n = m_sum / step.j;
    pt.n_over_n = n_sum / step.j;
    pt.m_mc_error = std::sqrt(m_var) / step.j;
    pt.n_mc_error = std::sqrt(n_var) / step.j;
    pt.event_rate = static_cast<double>(events) / step.j;
    trace.points.push_back(pt);
  };
  dp::evolve(field, beta, n, d, observer, evolve_options(options));
  return trace;
}

}  // namespace polylab::fenergy
