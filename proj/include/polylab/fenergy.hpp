#pragma once

// Monte Carlo estimates over environment replicas: the quenched free energy
// p(beta), the path constant alpha, bound and gap checks, the sufficient
// conditions for a finite critical beta, and the martingale diagnostic.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polylab/dp.hpp"
#include "polylab/env.hpp"

namespace polylab::fenergy {

struct RunOptions {
  int threads = 1;
  double prune_ratio = 0.0;
  std::size_t memory_budget = dp::kDefaultMemoryBudget;
};

struct FreeEnergyEstimate {
  env::EnvSpec spec;
  double beta = 0.0;
  int n = 0;
  int d = 1;
  int replicas = 0;
  std::uint64_t seed = 0;
  double mean = 0.0;       // average of ln Z_n / n
  double std_error = 0.0;  // sample sd / sqrt(replicas)
  std::vector<double> per_replica;      // ln Z_n / n, replica order
  std::vector<double> per_replica_max;  // N(n), only when requested
};

/// Replica r uses EnvField(spec, seed, r).
FreeEnergyEstimate estimate_p(const env::EnvSpec& spec, double beta, int n, int d, int replicas, std::uint64_t seed,
                              const RunOptions& options = {}, bool with_path_max = false);

/// Replicas with ln Z_n > beta * N(n) + slack. Needs per_replica_max.
int pathwise_violations(const FreeEnergyEstimate& est, double slack = 1e-9);

struct AlphaEstimate {
  env::EnvSpec spec;
  int d = 1;
  int replicas = 0;
  std::uint64_t seed = 0;
  std::vector<int> n_list;
  std::vector<double> means;       // mean of N(n)/n per n
  std::vector<double> std_errors;
  double mean = 0.0;               // largest-n entry
  double std_error = 0.0;
  bool biased_low = true;          // finite-n means approach alpha from below
  bool superadditive = true;       // means nondecreasing within 2 pooled stderr
  std::vector<double> per_replica;  // N(n_max)/n_max
};

/// One max-plus sweep per replica to max(n_list); smaller n read off the prefix maxima.
AlphaEstimate estimate_alpha(const env::EnvSpec& spec, const std::vector<int>& n_list, int d, int replicas,
                             std::uint64_t seed, const RunOptions& options = {});

struct BoundReport {
  double p_hat = 0.0;
  double p_std_error = 0.0;
  double alpha_upper = 0.0;   // alpha_hat + 2 stderr
  double lambda = 0.0;
  double bound = 0.0;         // min(beta * alpha_upper, lambda)
  double combined_std_error = 0.0;
  bool lambda_active = false;  // lambda is the smaller side
  bool pass = false;           // p_hat <= bound + 2 combined stderr
};

/// Throws ConfigError when the estimates disagree on spec or dimension.
BoundReport bound_check(const FreeEnergyEstimate& p, const AlphaEstimate& alpha, double lambda);

struct PhaseScan {
  env::EnvSpec spec;
  int n = 0;
  int d = 1;
  int replicas = 0;
  std::uint64_t seed = 0;
  std::vector<double> beta_grid;
  std::vector<FreeEnergyEstimate> estimates;
  std::vector<double> lambda;
  std::vector<double> gap;         // p_hat - lambda
  std::vector<double> gap_std_error;
  /// (previous grid point or 0, first grid point with |gap| > 2 stderr).
  std::optional<std::pair<double, double>> beta_c_bracket;
  bool monotone = true;  // gap[k+1] <= gap[k] + 2 pooled stderr for all k
};

/// Common random numbers: every beta sees the same replica environments.
PhaseScan gap_scan(const env::EnvSpec& spec, const std::vector<double>& beta_grid, int n, int d, int replicas,
                   std::uint64_t seed, const RunOptions& options = {});

struct PercolationThreshold {
  int d = 1;
  double value = 0.0;
  double uncertainty = 0.0;
};

/// Thresholds shipped with the library, produced by estimate_pc (see `polylab percolation`).
PercolationThreshold shipped_pc(int d);

struct PcOptions {
  int width = 0;       // periodic box side; 0 picks a per-dimension default
  int depth = 0;       // time steps per run; 0 picks a default
  int iterations = 12;
  std::uint64_t seed = 1;
};

struct PcEstimate {
  int d = 1;
  double value = 0.0;
  double half_width = 0.0;  // final bisection bracket
};

/// Oriented site percolation on N x Z^d (edges (t, x) -> (t+1, x +- e_i)).
/// Bisection on the curvature of the log-log density decay from a fully
/// occupied start.
PcEstimate estimate_pc(int d, const PcOptions& options = {});

/// Density of occupied sites after `depth` steps, for diagnostics and tests.
std::vector<double> percolation_density(int d, double p, int width, int depth, std::uint64_t seed);

struct DecConditionReport {
  double radius = 0.0;
  // Condition with R finite.
  bool finite_radius_applies = false;
  double lambda_at_radius_over_radius = 0.0;
  double alpha_upper = kInf;
  bool finite_radius_holds = false;
  // Condition with R infinite.
  bool infinite_radius_applies = false;
  double mass_at_top = 0.0;  // Q(eta = esssup eta)
  PercolationThreshold pc;
  bool infinite_radius_holds = false;
  bool infinite_radius_fails = false;
  bool guaranteed = false;  // some sufficient condition holds
  std::string verdict;      // "beta_c < R guaranteed" or "inconclusive"
};

/// alpha is only consulted when R is finite and lambda(R) is finite.
DecConditionReport lemma_dec_conditions(const env::EnvSpec& spec, int d,
                                        const std::optional<AlphaEstimate>& alpha = std::nullopt,
                                        std::optional<PercolationThreshold> pc = std::nullopt);

struct MartingalePoint {
  int n = 0;
  double m_over_n = 0.0;  // steps outside the event {atom mass >= delta}
  double n_over_n = 0.0;  // steps inside it
  double m_mc_error = 0.0;
  double n_mc_error = 0.0;
  double event_rate = 0.0;
};

struct MartingaleTrace {
  std::uint64_t replica = 0;
  std::vector<MartingalePoint> points;  // points[j-1] after step j
};

/// Conditional means of ln sum_x nu_j(x) e^{beta eta(j, x)} given the past are
/// estimated by resampling layer j (antithetic pairs, layer_samples draws).
MartingaleTrace martingale_diagnostic(const env::EnvSpec& spec, double beta, double eps, double delta, int n, int d,
                                      int layer_samples, std::uint64_t seed, std::uint64_t replica,
                                      const RunOptions& options = {});

}  // namespace polylab::fenergy
