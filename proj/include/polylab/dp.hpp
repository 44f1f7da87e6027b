#pragma once

// Exact lattice kernels for the directed polymer: the forward transfer-matrix
// recursion for the endpoint laws and log Z_n, the max-plus recursion for the
// best oriented path energy N(n), and a brute-force path enumeration oracle.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "polylab/common.hpp"
#include "polylab/env.hpp"
#include "polylab/lattice.hpp"

namespace polylab::dp {

inline constexpr std::size_t kDefaultMemoryBudget = std::size_t{2} << 30;  // 2 GiB

struct EvolveOptions {
  /// eta is clamped to [-clamp, clamp]; +inf leaves it untouched.
  double clamp = kInf;
  /// Drop sites whose endpoint mass is below prune_ratio * (max mass).
  /// 0 keeps every site with a representable mass (exact mode).
  double prune_ratio = 0.0;
  std::size_t memory_budget = kDefaultMemoryBudget;
};

/// One step of the recursion, handed to observers before the slices are reused.
struct StepView {
  int j;
  const LatticeSlice& nu;   // mu_{j-1}(omega_j = x)
  const LatticeSlice& rho;  // mu_j(omega_j = x)
  double increment;         // ln(Z_j / Z_{j-1})
  double log_z;             // ln Z_j
};

using Observer = std::function<void(const StepView&)>;

struct PolymerState {
  int j = 0;
  LatticeSlice rho;
  LatticeSlice nu;
  double log_z = 0.0;
  std::vector<double> step_increments;
};

/// Forward recursion nu_j = walk kernel * rho_{j-1}, rho_j ∝ nu_j e^{beta eta(j, .)}.
PolymerState evolve(const Environment& env, double beta, int n, int d, const Observer& observer = {},
                    const EvolveOptions& options = {});

/// evolve with eta clamped to [-L, L]; log_z is n * Y_{n,L}.
PolymerState truncated_evolve(const Environment& env, double beta, int n, int d, double level,
                              const Observer& observer = {}, EvolveOptions options = {});

using SiteTransform = std::function<double(double)>;

/// w(eta) = (|eta| - level)_+
SiteTransform excess_over(double level);

struct PathStats {
  int n = 0;
  double max_energy = 0.0;           // N(n) under the chosen transform
  std::vector<double> prefix_max;    // prefix_max[j-1] = N(j)
  std::optional<std::vector<Site>> argmax_path;  // omega_1..omega_n
};

/// Max-plus analogue of evolve: best sum of w(eta(j, omega_j)) over oriented paths.
PathStats max_path_energy(const Environment& env, int n, int d, const SiteTransform& transform = {},
                          bool want_path = false, std::size_t memory_budget = kDefaultMemoryBudget);

/// Sum of w(eta) along an explicit path (used to validate argmax paths).
double path_energy(const Environment& env, const std::vector<Site>& path, const SiteTransform& transform = {});

struct OracleResult {
  double log_z = 0.0;
  std::vector<std::map<Site, double>> nu;  // nu[j-1] = predictive law at time j
  double max_energy = 0.0;
};

/// Largest horizon the enumeration oracle accepts in dimension d.
int oracle_max_horizon(int d);

/// Enumerates all (2d)^n walk paths. Throws BudgetError beyond oracle_max_horizon.
OracleResult brute_force_oracle(const Environment& env, double beta, int n, int d,
                                std::optional<double> clamp = std::nullopt, const SiteTransform& transform = {});

/// Worst-case bytes evolve needs in exact mode.
std::size_t evolve_memory_estimate(int n, int d);

}  // namespace polylab::dp
