#pragma once

// E[ln sum_i lambda_i X_i] over probability vectors: Monte Carlo objective on a
// fixed sample bank, the two constraint sets (atom-mass cap and coordinate cap)
// with their closed-form minimizers, a multistart projected descent, and the
// limit inf_beta E[ln((1/n) sum X_i^beta)] -> inf_beta ln E[X^beta].

#include <cstdint>
#include <vector>

#include "polylab/common.hpp"
#include "polylab/env.hpp"

namespace polylab::simplex {

struct ProjectionError : NumericError {
  using NumericError::NumericError;
};

/// Probability vector; entries >= 0 summing to 1 within 1e-12.
class SimplexPoint {
 public:
  /// Throws ConfigError if the invariants fail.
  explicit SimplexPoint(std::vector<double> lambda);

  std::size_t size() const { return lambda_.size(); }
  double operator[](std::size_t i) const { return lambda_[i]; }
  const std::vector<double>& values() const { return lambda_; }

 private:
  std::vector<double> lambda_;
};

class ConstraintSet {
 public:
  enum class Kind { atom_mass, cap };

  /// sum_i lambda_i 1{lambda_i > eps} <= delta. Needs delta in (1/2, 1),
  /// eps in (0, 1 - delta), (1 - delta)/eps a positive integer and n >= that + 1.
  static ConstraintSet atom_mass(double eps, double delta, int n);
  /// max_i lambda_i <= 1/k, n >= k.
  static ConstraintSet cap(int k, int n);

  Kind kind() const { return kind_; }
  double eps() const { return eps_; }
  double delta() const { return delta_; }
  int n() const { return n_; }
  /// (1 - delta)/eps for atom_mass, k for cap.
  int block() const { return block_; }
  /// Smallest admissible dimension for these parameters.
  int min_dimension() const { return kind_ == Kind::atom_mass ? block_ + 1 : block_; }
  bool contains(const SimplexPoint& p, double tol = 1e-12) const;

 private:
  ConstraintSet(Kind kind, double eps, double delta, int n, int block)
      : kind_(kind), eps_(eps), delta_(delta), n_(n), block_(block) {}
  Kind kind_;
  double eps_;
  double delta_;
  int n_;
  int block_;
};

/// m rows of ln X_1..ln X_width, X = exp(beta * eta) with eta ~ spec; a pure
/// function of (spec, beta, seed).
class SampleBank {
 public:
  SampleBank(const env::EnvSpec& spec, double beta, int rows, int width, std::uint64_t seed);
  /// Bank from explicit ln X values, row-major.
  SampleBank(std::vector<double> log_x, int rows, int width);

  int rows() const { return rows_; }
  int width() const { return width_; }
  const double* row(int r) const { return log_x_.data() + static_cast<std::size_t>(r) * width_; }
  /// Same draws with columns reordered: column i of the result is column perm[i] here.
  SampleBank permuted(const std::vector<int>& perm) const;

 private:
  std::vector<double> log_x_;
  int rows_;
  int width_;
};

struct McValue {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Mean over rows of ln sum_i lambda_i X_i. Terms are summed in sorted order,
/// so permuting point and bank columns together leaves the result unchanged.
/// gradient, when given, receives the row means of X_i / sum_k lambda_k X_k.
McValue mc_objective(const SimplexPoint& point, const SampleBank& bank, std::vector<double>* gradient = nullptr);

/// atom_mass: (delta, eps x block, 0, ...); cap: (eps x k, 0, ...).
SimplexPoint closed_form_minimizer(const ConstraintSet& c);

/// Euclidean projection onto the simplex followed, for atom_mass, by a repair
/// when the atom mass exceeds delta: the largest coordinates (at most
/// n - block of them) stay atoms, the others are capped at eps and topped up
/// by water-filling to hold at least 1 - delta, and the atoms are rescaled to
/// the remainder. For cap it is the exact Euclidean projection onto the capped
/// simplex.
SimplexPoint project(const ConstraintSet& c, const std::vector<double>& v);

SimplexPoint random_feasible_point(const ConstraintSet& c, std::uint64_t seed, std::uint64_t trial);

struct Minimum {
  SimplexPoint point;
  McValue value;
  int start = 0;  // 0 is the closed-form start, k > 0 the k-th random one
  int iterations = 0;
};

/// Projected descent from the closed form and `restarts` random feasible points;
/// the lowest value wins, ties go to the earlier start.
Minimum constrained_minimize(const ConstraintSet& c, const SampleBank& bank, int restarts, std::uint64_t seed,
                             int threads = 1);

/// min over permutations of the L1 distance (sorted matching).
double l1_distance_up_to_permutation(const SimplexPoint& a, const SimplexPoint& b);

struct UtileRow {
  int n = 0;
  double beta_star = 0.0;
  double value = 0.0;  // min over beta of the bank mean of ln((1/n) sum X_i^beta)
  double std_error = 0.0;
};

struct UtileTable {
  double a = 0.0;
  double b = 0.0;
  int m = 0;
  std::uint64_t seed = 0;
  double limit = 0.0;       // inf over [a, b] of ln E[X^beta]
  double limit_beta = 0.0;
  std::vector<UtileRow> rows;
  bool nondecreasing = true;  // within 3 pooled stderr
};

/// For each n, a grid over [a, b] followed by a zoomed grid around the best
/// interior point; one shared bank per n.
UtileTable lemma_utile_check(const env::EnvSpec& spec, double a, double b, const std::vector<int>& n_list, int m,
                             std::uint64_t seed, int threads = 1);

}  // namespace polylab::simplex
