#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "polylab/atoms.hpp"

using namespace polylab;
using namespace polylab::atoms;

namespace {

LatticeSlice three_point() {
  return LatticeSlice::from_entries(3, 1, {{Site{-3, 0, 0}, 0.7}, {Site{-1, 0, 0}, 0.2}, {Site{1, 0, 0}, 0.1}});
}

double log_binomial(int n, int k) { return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0); }

AtomReport fake(int j, double eps, double delta, bool ge_delta) {
  AtomReport r;
  r.j = j;
  r.eps = eps;
  r.delta = delta;
  r.event_mass_ge_delta = ge_delta;
  r.event_has_atom = ge_delta;
  r.atom_mass = ge_delta ? 1.0 : 0.0;
  return r;
}

}  // namespace

TEST_CASE("three point law") {
  const auto nu = three_point();
  const auto r = atom_report(nu, 0.15, 0.85);
  REQUIRE(r.atom_sites.size() == 2);
  CHECK(r.atom_sites[0] == Site{-3, 0, 0});
  CHECK(r.atom_sites[1] == Site{-1, 0, 0});
  CHECK(r.atom_mass == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r.favorite_mass == 0.7);
  CHECK(r.event_mass_ge_delta);
  CHECK(r.event_has_atom);

  const auto high = atom_report(nu, 0.15, 0.95);
  CHECK_FALSE(high.event_mass_ge_delta);
  CHECK(high.event_has_atom);
}

TEST_CASE("uniform law has no atoms above its level") {
  std::vector<std::pair<Site, double>> entries;
  for (int k = 0; k < 100; ++k) entries.push_back({Site{2 * k - 99, 0, 0}, 0.01});
  const auto nu = LatticeSlice::from_entries(99, 1, entries);
  const auto r = atom_report(nu, 0.05, 0.5);
  CHECK(r.atom_sites.empty());
  CHECK(r.atom_mass == 0.0);
  CHECK(r.favorite_mass == 0.01);
  CHECK_FALSE(r.event_mass_ge_delta);
  CHECK_FALSE(r.event_has_atom);

  const auto low = atom_report(nu, 0.005, 0.5);
  CHECK(low.atom_sites.size() == 100);
  CHECK(low.event_mass_ge_delta);
}

TEST_CASE("mass exactly eps is not an atom") {
  const auto nu = LatticeSlice::from_entries(1, 1, {{Site{-1, 0, 0}, 0.5}, {Site{1, 0, 0}, 0.5}});
  const auto r = atom_report(nu, 0.5, 0.5);
  CHECK(r.atom_sites.empty());
  CHECK_FALSE(r.event_has_atom);
  CHECK_FALSE(r.event_mass_ge_delta);
  CHECK(atom_report(nu, std::nextafter(0.5, 0.0), 0.5).atom_sites.size() == 2);
}

TEST_CASE("delta threshold is inclusive") {
  const auto nu = LatticeSlice::from_entries(1, 1, {{Site{-1, 0, 0}, 0.75}, {Site{1, 0, 0}, 0.25}});
  CHECK(atom_report(nu, 0.5, 0.75).event_mass_ge_delta);
  CHECK_FALSE(atom_report(nu, 0.5, std::nextafter(0.75, 1.0)).event_mass_ge_delta);
}

TEST_CASE("invalid inputs") {
  const auto nu = three_point();
  CHECK_THROWS_AS(atom_report(nu, 0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(atom_report(nu, 1.0, 0.5), ConfigError);
  CHECK_THROWS_AS(atom_report(nu, 0.1, 0.0), ConfigError);
  CHECK_THROWS_AS(atom_report(nu, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(atom_report(nu, NAN, 0.5), ConfigError);
  const auto heavy = LatticeSlice::from_entries(1, 1, {{Site{-1, 0, 0}, 0.7}, {Site{1, 0, 0}, 0.7}});
  CHECK_THROWS_AS(atom_report(heavy, 0.1, 0.5), ConfigError);
  const auto almost = LatticeSlice::from_entries(1, 1, {{Site{-1, 0, 0}, 0.5}, {Site{1, 0, 0}, 0.5 + 5e-7}});
  CHECK_NOTHROW(atom_report(almost, 0.1, 0.5));
}

TEST_CASE("schedules") {
  CHECK(EpsSchedule::fixed(0.05).at(1) == 0.05);
  CHECK(EpsSchedule::fixed(0.05).at(1000) == 0.05);
  CHECK(EpsSchedule::inv_log(1.0).at(1) == doctest::Approx(1.0 / std::log(3.0)));
  CHECK(EpsSchedule::inv_log(1.0).at(98) == doctest::Approx(1.0 / std::log(100.0)));
  CHECK(EpsSchedule::power(0.5, 0.5).at(4) == doctest::Approx(0.25));

  CHECK(EpsSchedule::parse("0.05").kind() == EpsSchedule::Kind::fixed);
  CHECK(EpsSchedule::parse("fixed:0.2").at(7) == 0.2);
  CHECK(EpsSchedule::parse("invlog:1").kind() == EpsSchedule::Kind::inv_log);
  CHECK(EpsSchedule::parse("power:0.5:0.3").at(1) == 0.5);
  const auto round = EpsSchedule::parse(EpsSchedule::power(0.3, 0.7).describe());
  CHECK(round.at(17) == EpsSchedule::power(0.3, 0.7).at(17));

  CHECK_THROWS_AS(EpsSchedule::parse("zero"), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::parse("0.05x"), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::parse("power:0.5"), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::parse("invlog:2"), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::fixed(1.5), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::power(0.5, 0.0), ConfigError);
  CHECK_THROWS_AS(EpsSchedule::fixed(0.1).at(0), ConfigError);
}

TEST_CASE("free walk Cesaro statistics match binomial sums") {
  const env::EnvField f(env::EnvSpec::gaussian(), 5, 0);
  const double eps = 0.15, delta = 0.5;
  LocalizationTracker tracker({EpsSchedule::fixed(eps)}, delta);
  dp::evolve(f, 0.0, 100, 1, [&](const dp::StepView& v) { tracker(v); });

  double mass_sum = 0.0, fav_sum = 0.0, has_sum = 0.0, ge_sum = 0.0;
  double last_fav = 0.0;
  for (int j = 1; j <= 100; ++j) {
    double mass = 0.0, fav = 0.0;
    for (int k = 0; k <= j; ++k) {
      const double p = std::exp(log_binomial(j, k) - j * std::log(2.0));
      fav = std::max(fav, p);
      if (p > eps) mass += p;
    }
    mass_sum += mass;
    fav_sum += fav;
    has_sum += fav > eps;
    ge_sum += mass >= delta;
    last_fav = fav;
  }
  const auto& t = tracker.traces()[0];
  CHECK(t.n() == 100);
  CHECK(t.atom_mass() == doctest::Approx(mass_sum / 100).epsilon(1e-12));
  CHECK(t.favorite_mass() == doctest::Approx(fav_sum / 100).epsilon(1e-12));
  CHECK(t.has_atom_rate() == doctest::Approx(has_sum / 100));
  CHECK(t.mass_ge_delta_rate() == doctest::Approx(ge_sum / 100));
  CHECK(last_fav == doctest::Approx(0.0795892373871787).epsilon(1e-12));
  // Favorite mass of the free walk drops below 0.15 after j = 26.
  CHECK(t.has_atom_rate() == 0.26);
}

TEST_CASE("alternating event stream averages to one half") {
  CesaroTrace t(EpsSchedule::fixed(0.1), 0.5);
  for (int j = 1; j <= 1000; ++j) t.add(fake(j, 0.1, 0.5, j % 2 == 0));
  CHECK(t.mass_ge_delta_rate() == 0.5);
  CHECK(t.atom_mass() == 0.5);
  CHECK(t.n() == 1000);
}

TEST_CASE("stream misuse") {
  CesaroTrace t(EpsSchedule::fixed(0.1), 0.5);
  CHECK_THROWS_AS(t.add(fake(2, 0.1, 0.5, true)), ConfigError);
  t.add(fake(1, 0.1, 0.5, true));
  CHECK_THROWS_AS(t.add(fake(1, 0.1, 0.5, true)), ConfigError);
  CHECK_THROWS_AS(t.add(fake(2, 0.2, 0.5, true)), ConfigError);
  CHECK_THROWS_AS(t.add(fake(2, 0.1, 0.6, true)), ConfigError);
  CHECK_THROWS_AS(CesaroTrace(EpsSchedule::fixed(0.1), 1.0), ConfigError);
  CHECK(t.n() == 1);
}

TEST_CASE("atom statistics on a disordered polymer") {
  const env::EnvField f(env::EnvSpec::gaussian(), 11, 3);
  const std::vector<double> grid{0.01, 0.02, 0.05, 0.1, 0.2, 0.4};
  std::vector<EpsSchedule> schedules;
  for (double e : grid) schedules.push_back(EpsSchedule::fixed(e));
  int reports = 0;
  LocalizationTracker tracker(schedules, 0.3, [&](std::size_t, const AtomReport& r) {
    ++reports;
    if (r.event_mass_ge_delta) CHECK(r.event_has_atom);
    CHECK(r.atom_mass <= 1.0 + 1e-12);
    CHECK(r.favorite_mass >= 0.0);
  });
  dp::evolve(f, 2.0, 200, 2, [&](const dp::StepView& v) { tracker(v); });
  CHECK(reports == 200 * static_cast<int>(grid.size()));

  const auto& traces = tracker.traces();
  for (std::size_t k = 1; k < traces.size(); ++k) {
    CHECK(traces[k].atom_mass() <= traces[k - 1].atom_mass());
    CHECK(traces[k].has_atom_rate() <= traces[k - 1].has_atom_rate());
    CHECK(traces[k].mass_ge_delta_rate() <= traces[k - 1].mass_ge_delta_rate());
    CHECK(traces[k].favorite_mass() == traces[0].favorite_mass());
  }
  LocalizationTracker free({EpsSchedule::fixed(0.01)}, 0.3);
  dp::evolve(f, 0.0, 200, 2, [&](const dp::StepView& v) { free(v); });
  CHECK(traces[0].favorite_mass() > 5 * free.traces()[0].favorite_mass());
}

TEST_CASE("per-step monotonicity in eps") {
  const env::EnvField f(env::EnvSpec::exponential(1.0, -1.0), 2, 9);
  dp::evolve(f, 1.0, 60, 1, [&](const dp::StepView& v) {
    double prev_mass = 2.0;
    std::size_t prev_count = 1u << 30;
    for (double e : {0.001, 0.01, 0.05, 0.1, 0.3, 0.6}) {
      const auto r = atom_report(v.nu, e, 0.5);
      CHECK(r.atom_mass <= prev_mass);
      CHECK(r.atom_sites.size() <= prev_count);
      prev_mass = r.atom_mass;
      prev_count = r.atom_sites.size();
    }
  });
}
