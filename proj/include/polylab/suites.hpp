#pragma once

// Pinned-seed verification checks. The CLI's verify-suite command and the
// acceptance binary both run these.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "polylab/env.hpp"

namespace polylab::suites {

struct Check {
  std::string id;
  bool pass = false;
  double value = 0.0;      // headline statistic
  double threshold = 0.0;  // what value was compared against
  std::string detail;
  double seconds = 0.0;
};

nlohmann::json to_json(const Check& c);

/// One random oracle instance: spec, beta, horizon, dimension and field seed.
struct OracleInstance {
  env::EnvSpec spec;
  double beta = 0.0;
  int n = 1;
  int d = 1;
  std::uint64_t seed = 0;
};

/// Instance k of the stream keyed by seed; d alternates 1, 2 and n is uniform
/// on 1..12 (d=1) or 1..8 (d=2).
OracleInstance oracle_instance(std::uint64_t seed, int k);

struct OracleOutcome {
  double log_z_error = 0.0;
  double nu_error = 0.0;
  double max_energy_error = 0.0;
};

OracleOutcome compare_with_oracle(const OracleInstance& inst);

Check oracle_equivalence(int instances = 100, std::uint64_t seed = 1);
/// The two-step hand example: ln Z_2 = ln(3/2), rho_1(1) = 2/3, N(2) = ln 2.
Check worked_example();
Check pathwise_bound(int instances = 10000, std::uint64_t seed = 2, int threads = 1);
Check truncation_estimate(int instances = 200, std::uint64_t seed = 3, int threads = 1);
Check annealed_bound(int threads = 1);
Check gap_monotonicity(int threads = 1);
Check simplex_minimizers(int threads = 1);
Check utile_convergence(int threads = 1);
Check condition_examples();
/// Regression floor for the beta = 8 localization mass.
inline constexpr double kLocalizationFloor = 0.975;
Check localization_trend(int threads = 1);
/// Same grid with eps_j = 1/ln(j+2).
inline constexpr double kPurelyAtomicFloor = 0.89;
Check purely_atomic_trend(int threads = 1);
Check martingale_lln(int threads = 1);

const std::vector<std::string>& suite_names();
/// oracle, bounds, lemmas, localization or all. Throws ConfigError otherwise.
std::vector<Check> run_suite(const std::string& name, int threads = 1);

}  // namespace polylab::suites
