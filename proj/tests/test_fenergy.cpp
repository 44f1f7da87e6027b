#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "polylab/fenergy.hpp"
#include "polylab/parallel.hpp"

using namespace polylab;
using namespace polylab::fenergy;
using env::EnvSpec;

TEST_CASE("parallel_map keeps index order and rethrows the lowest failure") {
  for (int threads : {1, 2, 5}) {
    const auto out = parallel_map(37, threads, [](std::size_t i) { return i * i; });
    REQUIRE(out.size() == 37);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == i * i);
  }
  CHECK(parallel_map(0, 4, [](std::size_t i) { return i; }).empty());
  for (int threads : {1, 4}) {
    try {
      parallel_map(20, threads, [](std::size_t i) {
        if (i == 3 || i == 11) throw std::runtime_error(std::to_string(i));
        return i;
      });
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      // A single worker stops at 3; several may also reach 11, but 3 wins.
      CHECK(std::string(e.what()) == "3");
    }
  }
}

TEST_CASE("free energy at beta = 0 is exactly zero") {
  const auto e = estimate_p(EnvSpec::gaussian(), 0.0, 50, 2, 8, 1);
  CHECK(e.mean == 0.0);
  CHECK(e.std_error == 0.0);
  CHECK(e.per_replica.size() == 8);
}

TEST_CASE("constant environment gives beta * c") {
  const auto e = estimate_p(EnvSpec::constant(0.5), 2.0, 40, 1, 4, 1);
  CHECK(e.mean == 1.0);
  CHECK(e.std_error == 0.0);
  const auto a = estimate_alpha(EnvSpec::constant(0.5), {8, 16, 32}, 2, 3, 1);
  for (double m : a.means) CHECK(m == 0.5);
  CHECK(a.mean == 0.5);
  CHECK(a.superadditive);
}

TEST_CASE("replica values are reproducible across thread counts") {
  RunOptions one, three;
  three.threads = 3;
  const auto a = estimate_p(EnvSpec::pareto(4.0), 0.7, 120, 2, 7, 42, one);
  const auto b = estimate_p(EnvSpec::pareto(4.0), 0.7, 120, 2, 7, 42, three);
  REQUIRE(a.per_replica.size() == b.per_replica.size());
  for (std::size_t r = 0; r < a.per_replica.size(); ++r) CHECK(a.per_replica[r] == b.per_replica[r]);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
  const auto c = estimate_p(EnvSpec::pareto(4.0), 0.7, 120, 2, 7, 43, one);
  CHECK(c.per_replica[0] != a.per_replica[0]);
}

TEST_CASE("estimator preconditions") {
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), 1.0, 10, 1, 1, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), -1.0, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), 2e6, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), 1.0, 0, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), 1.0, 10, 4, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(0, -1), 1.0, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_p(EnvSpec::gaussian(), 1.0, 1000, 3, 2, 1), BudgetError);
  CHECK_THROWS_AS(estimate_alpha(EnvSpec::gaussian(), {10, 10}, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(estimate_alpha(EnvSpec::gaussian(), {}, 1, 4, 1), ConfigError);
  const auto no_max = estimate_p(EnvSpec::gaussian(), 1.0, 10, 1, 2, 1);
  CHECK_THROWS_AS(pathwise_violations(no_max), ConfigError);
}

TEST_CASE("pathwise bound on every replica") {
  const std::vector<EnvSpec> specs{EnvSpec::gaussian(), EnvSpec::exponential(1.0, -1.0), EnvSpec::pareto(2.5),
                                   EnvSpec::bernoulli(0.3, 2.0, -1.0), EnvSpec::uniform(-2.0, 1.0)};
  int replicas = 0;
  for (const auto& spec : specs) {
    for (double beta : {0.0, 0.3, 1.0, 4.0}) {
      for (auto [d, n] : {std::pair{1, 150}, std::pair{2, 40}, std::pair{3, 16}}) {
        const auto e = estimate_p(spec, beta, n, d, 6, 17, {}, true);
        CHECK(pathwise_violations(e) == 0);
        replicas += e.replicas;
      }
    }
  }
  CHECK(replicas == 5 * 4 * 3 * 6);
}

TEST_CASE("weak disorder in three dimensions sits at the annealed value") {
  RunOptions o;
  o.prune_ratio = 1e-4;
  const auto e = estimate_p(EnvSpec::gaussian(), 0.3, 400, 3, 64, 7, o);
  CHECK(std::abs(e.mean - 0.045) <= 2 * e.std_error + 0.02);
  // Regression value from the first green build.
  CHECK(e.mean == doctest::Approx(0.0449966).epsilon(1e-5));
}

TEST_CASE("alpha estimates") {
  const auto a = estimate_alpha(EnvSpec::exponential(1.0), {250, 500, 1000, 2000}, 1, 64, 11);
  CHECK(a.biased_low);
  CHECK(a.superadditive);
  CHECK(a.mean == doctest::Approx(1.99086).epsilon(1e-4));
  CHECK(a.std_error == doctest::Approx(0.00122).epsilon(0.02));
  for (std::size_t k = 1; k < a.means.size(); ++k) CHECK(a.means[k] > a.means[k - 1]);

  const auto dense = estimate_alpha(EnvSpec::bernoulli(0.999), {50, 200}, 1, 8, 3);
  CHECK(dense.mean > 0.99);
  CHECK(dense.mean <= 1.0);
}

TEST_CASE("bound check") {
  const auto p0 = estimate_p(EnvSpec::gaussian(), 0.0, 100, 1, 4, 1);
  const auto a0 = estimate_alpha(EnvSpec::gaussian(), {100}, 1, 4, 1);
  const auto b0 = bound_check(p0, a0, env::log_mgf(EnvSpec::gaussian(), 0.0));
  CHECK(b0.pass);
  CHECK(b0.bound == 0.0);

  const auto pareto = EnvSpec::pareto(3.0);
  const auto pp = estimate_p(pareto, 0.5, 300, 1, 16, 2);
  const auto ap = estimate_alpha(pareto, {300}, 1, 16, 2);
  const auto bp = bound_check(pp, ap, env::log_mgf(pareto, 0.5));
  CHECK(bp.lambda == kInf);
  CHECK_FALSE(bp.lambda_active);
  CHECK(bp.bound == doctest::Approx(0.5 * (ap.mean + 2 * ap.std_error)));
  CHECK(bp.pass);

  const auto pg = estimate_p(EnvSpec::gaussian(), 1.0, 1000, 1, 64, 2024);
  const auto ag = estimate_alpha(EnvSpec::gaussian(), {1000}, 1, 16, 2024);
  const auto bg = bound_check(pg, ag, 0.5);
  CHECK(bg.lambda_active);
  CHECK(bg.pass);
  CHECK(pg.mean < 0.5 - 2 * pg.std_error);

  CHECK_THROWS_AS(bound_check(pg, ap, 0.5), ConfigError);
  const auto ag2 = estimate_alpha(EnvSpec::gaussian(), {30}, 2, 4, 1);
  CHECK_THROWS_AS(bound_check(pg, ag2, 0.5), ConfigError);
}

TEST_CASE("gap scans") {
  const auto flat = gap_scan(EnvSpec::constant(0.5), {0.5, 1.0, 2.0}, 60, 2, 4, 1);
  for (double g : flat.gap) CHECK(g == 0.0);
  CHECK_FALSE(flat.beta_c_bracket);
  CHECK(flat.monotone);

  const auto s = gap_scan(EnvSpec::gaussian(), {0.25, 0.5, 1.0, 2.0}, 1000, 1, 64, 2024);
  CHECK(s.monotone);
  CHECK(s.gap[3] < -2 * s.gap_std_error[3]);
  for (std::size_t k = 0; k < s.gap.size(); ++k) {
    CHECK(s.gap_std_error[k] == s.estimates[k].std_error);
    CHECK(s.lambda[k] == doctest::Approx(s.beta_grid[k] * s.beta_grid[k] / 2));
  }
  REQUIRE(s.beta_c_bracket);
  CHECK(s.beta_c_bracket->first == 0.0);
  CHECK(s.beta_c_bracket->second == 0.25);

  // Shared replicas: the scan reuses exactly the environments estimate_p sees.
  const auto direct = estimate_p(EnvSpec::gaussian(), 1.0, 1000, 1, 64, 2024);
  CHECK(direct.per_replica == s.estimates[2].per_replica);

  RunOptions o;
  o.prune_ratio = 1e-4;
  const auto weak = gap_scan(EnvSpec::gaussian(), {0.1, 0.2}, 200, 3, 32, 5, o);
  for (std::size_t k = 0; k < weak.gap.size(); ++k) CHECK(std::abs(weak.gap[k]) <= 2 * weak.gap_std_error[k]);
  CHECK_FALSE(weak.beta_c_bracket);

  CHECK_THROWS_AS(gap_scan(EnvSpec::exponential(1.0), {0.5, 1.0}, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(gap_scan(EnvSpec::pareto(4.0), {0.0}, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(gap_scan(EnvSpec::gaussian(), {0.5, 0.5}, 10, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(gap_scan(EnvSpec::gaussian(), {}, 10, 1, 4, 1), ConfigError);
}

TEST_CASE("oriented percolation density") {
  const auto full = percolation_density(2, 1.0, 16, 20, 1);
  for (double r : full) CHECK(r == 1.0);
  const auto empty = percolation_density(1, 0.0, 16, 5, 1);
  for (double r : empty) CHECK(r == 0.0);
  // Same random numbers for every p, so the density is monotone in p.
  const auto lo = percolation_density(3, 0.2, 12, 40, 9);
  const auto hi = percolation_density(3, 0.25, 12, 40, 9);
  for (std::size_t t = 0; t < lo.size(); ++t) CHECK(lo[t] <= hi[t]);
  CHECK_THROWS_AS(percolation_density(1, 0.5, 15, 10, 1), ConfigError);
  CHECK_THROWS_AS(percolation_density(1, 1.5, 16, 10, 1), ConfigError);
}

TEST_CASE("threshold routine at small scale agrees with the shipped table") {
  PcOptions o;
  o.width = 4000;
  o.depth = 2000;
  for (std::uint64_t seed : {1u, 2u}) {
    o.seed = seed;
    const auto e = estimate_pc(1, o);
    CHECK(std::abs(e.value - shipped_pc(1).value) < 0.01);
    CHECK(e.half_width < 1e-3);
  }
  o.width = 64;
  o.depth = 400;
  CHECK(std::abs(estimate_pc(2, o).value - shipped_pc(2).value) < 0.01);
  CHECK_THROWS_AS(shipped_pc(4), ConfigError);
}

TEST_CASE("sufficient conditions for a finite critical beta") {
  const auto ex = lemma_dec_conditions(EnvSpec::exponential(1.0), 1);
  CHECK(ex.finite_radius_applies);
  CHECK(ex.lambda_at_radius_over_radius == kInf);
  CHECK(ex.finite_radius_holds);
  CHECK(ex.guaranteed);
  CHECK(ex.verdict == "beta_c < R guaranteed");

  const auto b4 = lemma_dec_conditions(EnvSpec::bernoulli(0.4), 1);
  CHECK(b4.infinite_radius_applies);
  CHECK(b4.mass_at_top == 0.4);
  CHECK(b4.infinite_radius_holds);
  CHECK(b4.guaranteed);

  const auto b9 = lemma_dec_conditions(EnvSpec::bernoulli(0.9), 1);
  CHECK(b9.infinite_radius_fails);
  CHECK_FALSE(b9.guaranteed);
  CHECK(b9.verdict == "inconclusive");

  const auto edge = lemma_dec_conditions(EnvSpec::bernoulli(shipped_pc(1).value), 1);
  CHECK_FALSE(edge.infinite_radius_holds);
  CHECK_FALSE(edge.infinite_radius_fails);
  CHECK(edge.verdict == "inconclusive");
  CHECK(lemma_dec_conditions(EnvSpec::bernoulli(0.3), 2).guaranteed);
  CHECK_FALSE(lemma_dec_conditions(EnvSpec::bernoulli(0.3), 3).guaranteed);

  CHECK(lemma_dec_conditions(EnvSpec::gaussian(), 3).guaranteed);
  CHECK(lemma_dec_conditions(EnvSpec::uniform(0, 1), 2).mass_at_top == 0.0);
  const auto pa = lemma_dec_conditions(EnvSpec::pareto(4.0), 1);
  CHECK_FALSE(pa.finite_radius_applies);
  CHECK_FALSE(pa.infinite_radius_applies);
  CHECK(pa.verdict == "inconclusive");

  const auto custom = lemma_dec_conditions(EnvSpec::bernoulli(0.4), 1, std::nullopt, PercolationThreshold{1, 0.3, 0.01});
  CHECK(custom.infinite_radius_fails);
  const auto a = estimate_alpha(EnvSpec::gaussian(), {20}, 1, 4, 1);
  CHECK_THROWS_AS(lemma_dec_conditions(EnvSpec::exponential(1.0), 1, a), ConfigError);
  CHECK_THROWS_AS(lemma_dec_conditions(EnvSpec::gaussian(), 2, a), ConfigError);
  CHECK_NOTHROW(lemma_dec_conditions(EnvSpec::gaussian(), 1, a));
}

TEST_CASE("martingale diagnostic") {
  const auto zero = martingale_diagnostic(EnvSpec::gaussian(), 0.0, 0.1, 0.8, 200, 2, 100, 1, 0);
  REQUIRE(zero.points.size() == 200);
  for (const auto& p : zero.points) {
    CHECK(p.m_over_n == 0.0);
    CHECK(p.n_over_n == 0.0);
    CHECK(p.m_mc_error == 0.0);
  }

  // One step: nu_1 is the uniform law on 2d sites, eps = 0.6 leaves no atom.
  RunningStats first;
  for (std::uint64_t r = 0; r < 64; ++r) {
    const auto t = martingale_diagnostic(EnvSpec::exponential(1.0), 0.5, 0.6, 0.5, 1, 2, 100, 3, r);
    CHECK(t.points[0].n_over_n == 0.0);
    CHECK(t.points[0].event_rate == 0.0);
    first.add(t.points[0].m_over_n);
  }
  CHECK(std::abs(first.mean()) <= 3 * first.std_error());

  double m100 = 0, m1000 = 0, n100 = 0, n1000 = 0;
  for (std::uint64_t r = 0; r < 16; ++r) {
    const auto t = martingale_diagnostic(EnvSpec::gaussian(), 2.0, 0.1, 0.8, 1000, 1, 200, 99, r);
    for (int n : {100, 300, 1000}) {
      const auto& p = t.points[static_cast<std::size_t>(n - 1)];
      CHECK(p.n == n);
      CHECK(std::abs(p.m_over_n) + std::abs(p.n_over_n) <= 1.5 / std::sqrt(n) * 3);
    }
    m100 += std::abs(t.points[99].m_over_n);
    m1000 += std::abs(t.points[999].m_over_n);
    n100 += std::abs(t.points[99].n_over_n);
    n1000 += std::abs(t.points[999].n_over_n);
  }
  // Replica-averaged envelope 1.5 / sqrt(n), from the pilot run.
  CHECK((m100 + n100) / 16 <= 1.5 / std::sqrt(100.0));
  CHECK((m1000 + n1000) / 16 <= 1.5 / std::sqrt(1000.0));

  CHECK_THROWS_AS(martingale_diagnostic(EnvSpec::gaussian(), 1.0, 0.1, 0.8, 10, 1, 99, 1, 0), ConfigError);
  CHECK_THROWS_AS(martingale_diagnostic(EnvSpec::gaussian(), 1.0, 0.0, 0.8, 10, 1, 100, 1, 0), ConfigError);
}
