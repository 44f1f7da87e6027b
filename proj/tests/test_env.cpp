#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstring>
#include <vector>

#include "polylab/env.hpp"

using namespace polylab;
using namespace polylab::env;

namespace {

std::uint64_t bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, sizeof b);
  return b;
}

// 10^6 draws along a d=2 space-time block.
template <class F>
void draws(const EnvField& f, int count, F&& visit) {
  int k = 0;
  for (int j = 1; k < count; ++j)
    for (int x = -500; x < 500 && k < count; ++x, ++k) visit(f.eta(j, Site{x, j % 7, 0}));
}

}  // namespace

TEST_CASE("sample_eta is a pure function of its key") {
  const EnvField f(EnvSpec::gaussian(), 42, 3);
  const EnvField g(EnvSpec::gaussian(), 42, 3);
  for (int j = 1; j <= 20; ++j)
    for (int x = -5; x <= 5; ++x) {
      const Site s{x, -x, 2 * x};
      CHECK(bits(sample_eta(f, j, s)) == bits(f.eta(j, s)));
      CHECK(bits(f.eta(j, s)) == bits(g.eta(j, s)));
    }
}

TEST_CASE("row evaluation reproduces pointwise values") {
  for (const auto& spec : {EnvSpec::gaussian(0.5, 2), EnvSpec::exponential(2, -0.5), EnvSpec::pareto(4, 2),
                           EnvSpec::bernoulli(0.25, 3, -1), EnvSpec::uniform(-1, 1, 0.25)}) {
    const EnvField f(spec, 17, 2);
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<double> row(25);
      const Site start{-3, 4, -12};
      f.eta_run(9, start, axis, 25, row.data());
      Site x = start;
      for (int k = 0; k < 25; ++k, x[axis] += 2) CHECK(bits(row[static_cast<std::size_t>(k)]) == bits(f.eta(9, x)));
    }
  }
}

TEST_CASE("replica id changes the field") {
  const EnvField a(EnvSpec::exponential(), 9, 0);
  const EnvField b(EnvSpec::exponential(), 9, 1);
  int differ = 0;
  for (int i = 0; i < 100; ++i) differ += a.eta(1 + i / 10, Site{i % 10, 0, 0}) != b.eta(1 + i / 10, Site{i % 10, 0, 0});
  CHECK(differ > 0);
  const EnvField c(EnvSpec::exponential(), 10, 0);
  CHECK(a.eta(1, Site{}) != c.eta(1, Site{}));
}

TEST_CASE("bernoulli outputs stay in the support") {
  const EnvField f(EnvSpec::bernoulli(0.3), 5, 0);
  int ones = 0;
  for (int j = 1; j <= 100; ++j)
    for (int x = -50; x <= 50; ++x) {
      const double v = f.eta(j, Site{x, 0, 0});
      CHECK((v == 0.0 || v == 1.0));
      ones += v == 1.0;
    }
  CHECK(std::abs(ones / 10100.0 - 0.3) < 0.02);
}

TEST_CASE("exponential(1) empirical mean over 1e6 sites") {
  const EnvField f(EnvSpec::exponential(1.0), 2024, 0);
  RunningStats s;
  draws(f, 1000000, [&](double v) { s.add(v); });
  CHECK(std::abs(s.mean() - 1.0) < 0.005);
}

TEST_CASE("empirical moments and log-mgf match the analytic metadata") {
  struct Case {
    EnvSpec spec;
    std::vector<double> betas;
  };
  const std::vector<Case> cases = {
      {EnvSpec::gaussian(0.3, 2.0), {0.25, 0.5}},
      {EnvSpec::exponential(2.0, -0.5), {0.5, 0.9}},
      {EnvSpec::pareto(4.0, 1.5, -2.0), {}},
      {EnvSpec::bernoulli(0.3, 2.0, -1.0), {1.0, 2.0}},
      {EnvSpec::uniform(-1.0, 3.0), {0.5, 1.0}},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    CAPTURE(c.spec.family_name());
    const EnvField f(c.spec, ++seed, 0);
    std::vector<double> values;
    values.reserve(1000000);
    draws(f, 1000000, [&](double v) { values.push_back(v); });
    RunningStats s;
    for (double v : values) s.add(v);
    CHECK(std::abs(s.mean() - mean(c.spec)) < 5 * s.std_error());
    for (double beta : c.betas) {
      CAPTURE(beta);
      REQUIRE(2 * beta < mgf_radius(c.spec));
      RunningStats e;
      for (double v : values) e.add(std::exp(beta * v));
      // Delta method: se of ln(mean) is se(mean) / mean.
      CHECK(std::abs(std::log(e.mean()) - log_mgf(c.spec, beta)) < 5 * e.std_error() / e.mean());
    }
  }
}

TEST_CASE("log_mgf closed forms") {
  CHECK(log_mgf(EnvSpec::gaussian(), 2.0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(log_mgf(EnvSpec::exponential(1.0), 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_mgf(EnvSpec::pareto(4.0), 0.1) == kInf);
  for (const auto& s : {EnvSpec::gaussian(), EnvSpec::exponential(), EnvSpec::pareto(4.0), EnvSpec::bernoulli(0.4),
                        EnvSpec::uniform(0, 1)})
    CHECK(log_mgf(s, 0.0) == 0.0);
  CHECK(log_mgf(EnvSpec::exponential(1.0), 1.0) == kInf);
  CHECK(log_mgf(EnvSpec::exponential(1.0), 1.5) == kInf);
  CHECK(log_mgf(EnvSpec::exponential(1.0, -1.0), 0.5) == doctest::Approx(std::log(2.0) - 0.5));
  CHECK(log_mgf(EnvSpec::bernoulli(0.4), 1.0) == doctest::Approx(std::log(0.6 + 0.4 * std::exp(1.0))));
  CHECK_THROWS_AS(log_mgf(EnvSpec::gaussian(), -1.0), ConfigError);
}

TEST_CASE("mgf radius per family") {
  CHECK(mgf_radius(EnvSpec::exponential(1.0)) == 1.0);
  CHECK(mgf_radius(EnvSpec::exponential(3.0)) == 3.0);
  CHECK(mgf_radius(EnvSpec::gaussian()) == kInf);
  CHECK(mgf_radius(EnvSpec::bernoulli(0.5)) == kInf);
  CHECK(mgf_radius(EnvSpec::uniform(0, 1)) == kInf);
  CHECK(mgf_radius(EnvSpec::pareto(4.0)) == 0.0);
}

TEST_CASE("check_conditions examples") {
  const auto p4 = check_conditions(EnvSpec::pareto(4.0), 1);
  CHECK(p4.hyp1);
  CHECK(p4.hyp2);
  REQUIRE(p4.theta_moment);
  CHECK(*p4.theta_moment > 1.0);
  CHECK(*p4.theta_moment < 4.0);
  CHECK_FALSE(p4.explodes);

  CHECK_FALSE(check_conditions(EnvSpec::pareto(1.5), 1).hyp1);
  CHECK(check_conditions(EnvSpec::pareto(1.5), 1).hyp2);
  CHECK_FALSE(check_conditions(EnvSpec::pareto(4.0), 3).hyp1);  // a/(d+1) = 1
  CHECK_FALSE(check_conditions(EnvSpec::pareto(0.8), 1).hyp2);

  const auto e = check_conditions(EnvSpec::exponential(1.0), 2);
  CHECK(e.hyp1);
  CHECK(e.hyp2);
  CHECK(e.hyp3);
  CHECK(e.explodes);
  CHECK(e.radius == 1.0);

  // R = inf: explodes iff esssup is infinite.
  CHECK(check_conditions(EnvSpec::gaussian(), 1).explodes);
  CHECK_FALSE(check_conditions(EnvSpec::bernoulli(0.4), 1).explodes);
  CHECK_FALSE(check_conditions(EnvSpec::uniform(0, 1), 2).explodes);
  CHECK(check_conditions(EnvSpec::bernoulli(0.4), 1).esssup == 1.0);
}

TEST_CASE("condition flags agree with the (d+1)-th positive moment") {
  // hyp1 implies Q[(eta_+)^(d+1)] < inf; for pareto that moment is finite iff a > d + 1.
  for (double a : {0.5, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0})
    for (int d = 1; d <= 3; ++d) {
      const auto r = check_conditions(EnvSpec::pareto(a), d);
      if (r.hyp1) CHECK(a > d + 1);
    }
}

TEST_CASE("gaussian quantile matches boost to 1e-9") {
  boost::math::normal_distribution<double> n01;
  std::vector<double> ps = {1e-300, 1e-100, 1e-20, 1e-10, 1e-5, 0.001, 0.02425, 0.075, 0.5 - 0.425, 0.3, 0.5};
  for (int i = 1; i < 1000; ++i) ps.push_back(i / 1000.0);
  for (double p : ps) {
    CAPTURE(p);
    CHECK(std::abs(normal_quantile(p) - boost::math::quantile(n01, p)) < 1e-9);
    if (p < 0.5 && 1 - p < 1.0) CHECK(std::abs(normal_quantile(1 - p) - boost::math::quantile(n01, 1 - p)) < 1e-9);
  }
  CHECK(normal_quantile(0.5) == 0.0);
}

TEST_CASE("spec validation and JSON") {
  CHECK_THROWS_AS(EnvSpec::gaussian(0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(EnvSpec::exponential(-1).validate(), ConfigError);
  CHECK_THROWS_AS(EnvSpec::pareto(0).validate(), ConfigError);
  CHECK_THROWS_AS(EnvSpec::bernoulli(1.0).validate(), ConfigError);
  CHECK_THROWS_AS(EnvSpec::bernoulli(0.5, 1, 1).validate(), ConfigError);
  CHECK_THROWS_AS(EnvSpec::uniform(1, 1).validate(), ConfigError);

  for (const auto& s : {EnvSpec::gaussian(0.5, 2), EnvSpec::exponential(2, -0.5), EnvSpec::pareto(4, 2),
                        EnvSpec::bernoulli(0.25, 3, -1), EnvSpec::uniform(-1, 1, 0.25)}) {
    const auto back = spec_from_json(nlohmann::json::parse(to_json(s).dump()));
    CHECK(back == s);
    CHECK(parse_spec(to_json(s).dump()) == s);
  }
  const auto p = parse_spec(R"({"family":"pareto","params":{"a":1.5},"offset":0})");
  CHECK(std::get<Pareto>(p.family).a == 1.5);
  CHECK(std::get<Pareto>(p.family).scale == 1.0);
  CHECK(parse_spec("exp1c").offset == -1.0);
  CHECK(parse_spec("gauss1") == EnvSpec::gaussian());
  CHECK_THROWS_AS(parse_spec(R"({"family":"pareto","params":{}})"), ConfigError);
  CHECK_THROWS_AS(parse_spec(R"({"family":"gaussian","params":{"sigma":1}})"), ConfigError);
  CHECK_THROWS_AS(parse_spec(R"({"family":"cauchy"})"), ConfigError);
  CHECK_THROWS_AS(parse_spec("not json"), ConfigError);
  CHECK_THROWS_AS(parse_spec(R"({"family":"gaussian","version":2})"), ConfigError);
}

TEST_CASE("quantile families") {
  CHECK(EnvSpec::exponential(2.0).quantile(1 - std::exp(-1.0)) == doctest::Approx(0.5));
  CHECK(EnvSpec::pareto(2.0, 3.0).quantile(0.75) == doctest::Approx(6.0));
  CHECK(EnvSpec::bernoulli(0.3, 5, -5).quantile(0.29) == 5.0);
  CHECK(EnvSpec::bernoulli(0.3, 5, -5).quantile(0.31) == -5.0);
  CHECK(EnvSpec::uniform(2, 4, 1).quantile(0.25) == doctest::Approx(3.5));
  CHECK(EnvSpec::gaussian(1, 2).quantile(0.5) == 1.0);
}
