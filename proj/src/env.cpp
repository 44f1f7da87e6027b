#include "polylab/env.hpp"

#include <cmath>
#include <sstream>

namespace polylab::env {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid environment: " + what);
}

bool finite(double v) { return std::isfinite(v); }

// ln(p e^x + (1-p) e^y), stable.
double log_mix(double p, double x, double y) {
  const double m = std::max(x, y);
  return m + std::log(p * std::exp(x - m) + (1.0 - p) * std::exp(y - m));
}

}  // namespace

EnvSpec EnvSpec::gaussian(double mean, double stddev, double offset) {
  EnvSpec s{Gaussian{mean, stddev}, offset};
  s.validate();
  return s;
}
EnvSpec EnvSpec::exponential(double rate, double offset) {
  EnvSpec s{Exponential{rate}, offset};
  s.validate();
  return s;
}
EnvSpec EnvSpec::pareto(double a, double scale, double offset) {
  EnvSpec s{Pareto{a, scale}, offset};
  s.validate();
  return s;
}
EnvSpec EnvSpec::bernoulli(double p, double high, double low, double offset) {
  EnvSpec s{Bernoulli{p, high, low}, offset};
  s.validate();
  return s;
}
EnvSpec EnvSpec::uniform(double lo, double hi, double offset) {
  EnvSpec s{Uniform{lo, hi}, offset};
  s.validate();
  return s;
}
EnvSpec EnvSpec::constant(double value) {
  EnvSpec s{Constant{value}, 0.0};
  s.validate();
  return s;
}

void EnvSpec::validate() const {
  require(finite(offset), "offset must be finite");
  std::visit(Overloaded{
                 [](const Gaussian& g) {
                   require(finite(g.mean), "gaussian mean must be finite");
                   require(finite(g.stddev) && g.stddev > 0, "gaussian stddev must be > 0");
                 },
                 [](const Exponential& e) {
                   require(finite(e.rate) && e.rate > 0, "exponential rate must be > 0");
                 },
                 [](const Pareto& p) {
                   require(finite(p.a) && p.a > 0, "pareto tail index a must be > 0");
                   require(finite(p.scale) && p.scale > 0, "pareto scale must be > 0");
                 },
                 [](const Bernoulli& b) {
                   require(b.p > 0 && b.p < 1, "bernoulli p must lie in (0, 1)");
                   require(finite(b.high) && finite(b.low), "bernoulli values must be finite");
                   require(b.high != b.low, "bernoulli high and low must differ");
                 },
                 [](const Uniform& u) {
                   require(finite(u.lo) && finite(u.hi) && u.lo < u.hi, "uniform needs lo < hi");
                 },
                 [](const Constant& c) { require(finite(c.value), "constant must be finite"); },
             },
             family);
}

std::string EnvSpec::family_name() const {
  return std::visit(Overloaded{
                        [](const Gaussian&) { return std::string("gaussian"); },
                        [](const Exponential&) { return std::string("exponential"); },
                        [](const Pareto&) { return std::string("pareto"); },
                        [](const Bernoulli&) { return std::string("bernoulli"); },
                        [](const Uniform&) { return std::string("uniform"); },
                        [](const Constant&) { return std::string("constant"); },
                    },
                    family);
}

double EnvSpec::quantile(double u) const {
  const double x = std::visit(
      Overloaded{
          [u](const Gaussian& g) { return g.mean + g.stddev * normal_quantile(u); },
          [u](const Exponential& e) { return -std::log1p(-u) / e.rate; },
          [u](const Pareto& p) { return p.scale * std::pow(1.0 - u, -1.0 / p.a); },
          [u](const Bernoulli& b) { return u < b.p ? b.high : b.low; },
          [u](const Uniform& un) { return un.lo + u * (un.hi - un.lo); },
          [](const Constant& c) { return c.value; },
      },
      family);
  return x + offset;
}

void EnvSpec::quantile_in_place(double* u, int count) const {
  const double off = offset;
  std::visit(
      Overloaded{
          [&](const Gaussian& g) {
            for (int k = 0; k < count; ++k) u[k] = g.mean + g.stddev * normal_quantile(u[k]) + off;
          },
          [&](const Exponential& e) {
            for (int k = 0; k < count; ++k) u[k] = -std::log1p(-u[k]) / e.rate + off;
          },
          [&](const Pareto& p) {
            for (int k = 0; k < count; ++k) u[k] = p.scale * std::pow(1.0 - u[k], -1.0 / p.a) + off;
          },
          [&](const Bernoulli& b) {
            for (int k = 0; k < count; ++k) u[k] = (u[k] < b.p ? b.high : b.low) + off;
          },
          [&](const Uniform& un) {
            for (int k = 0; k < count; ++k) u[k] = un.lo + u[k] * (un.hi - un.lo) + off;
          },
          [&](const Constant& c) {
            for (int k = 0; k < count; ++k) u[k] = c.value + off;
          },
      },
      family);
}

bool operator==(const EnvSpec& a, const EnvSpec& b) { return to_json(a) == to_json(b); }

double log_mgf(const EnvSpec& spec, double beta) {
  if (beta < 0 || std::isnan(beta)) throw ConfigError("log_mgf requires beta >= 0");
  if (beta == 0) return 0.0;
  const double core = std::visit(
      Overloaded{
          [beta](const Gaussian& g) { return beta * g.mean + 0.5 * beta * beta * g.stddev * g.stddev; },
          [beta](const Exponential& e) { return beta < e.rate ? -std::log1p(-beta / e.rate) : kInf; },
          [](const Pareto&) { return kInf; },
          [beta](const Bernoulli& b) { return log_mix(b.p, beta * b.high, beta * b.low); },
          [beta](const Uniform& u) {
            // ln((e^{b hi} - e^{b lo}) / (b (hi - lo)))
            const double w = beta * (u.hi - u.lo);
            return beta * u.lo + std::log(std::expm1(w) / w);
          },
          [beta](const Constant& c) { return beta * c.value; },
      },
      spec.family);
  return core == kInf ? kInf : core + beta * spec.offset;
}

double mgf_radius(const EnvSpec& spec) {
  if (const auto* e = std::get_if<Exponential>(&spec.family)) return e->rate;
  if (std::holds_alternative<Pareto>(spec.family)) return 0.0;
  return kInf;
}

double mean(const EnvSpec& spec) {
  const double core = std::visit(Overloaded{
                                     [](const Gaussian& g) { return g.mean; },
                                     [](const Exponential& e) { return 1.0 / e.rate; },
                                     [](const Pareto& p) { return p.a > 1 ? p.a * p.scale / (p.a - 1) : kInf; },
                                     [](const Bernoulli& b) { return b.p * b.high + (1 - b.p) * b.low; },
                                     [](const Uniform& u) { return 0.5 * (u.lo + u.hi); },
                                     [](const Constant& c) { return c.value; },
                                 },
                                 spec.family);
  return core + spec.offset;
}

double variance(const EnvSpec& spec) {
  return std::visit(Overloaded{
                        [](const Gaussian& g) { return g.stddev * g.stddev; },
                        [](const Exponential& e) { return 1.0 / (e.rate * e.rate); },
                        [](const Pareto& p) {
                          return p.a > 2 ? p.scale * p.scale * p.a / ((p.a - 1) * (p.a - 1) * (p.a - 2)) : kInf;
                        },
                        [](const Bernoulli& b) { return b.p * (1 - b.p) * (b.high - b.low) * (b.high - b.low); },
                        [](const Uniform& u) { return (u.hi - u.lo) * (u.hi - u.lo) / 12.0; },
                        [](const Constant&) { return 0.0; },
                    },
                    spec.family);
}

double esssup(const EnvSpec& spec) {
  const double core = std::visit(Overloaded{
                                     [](const Gaussian&) { return kInf; },
                                     [](const Exponential&) { return kInf; },
                                     [](const Pareto&) { return kInf; },
                                     [](const Bernoulli& b) { return std::max(b.high, b.low); },
                                     [](const Uniform& u) { return u.hi; },
                                     [](const Constant& c) { return c.value; },
                                 },
                                 spec.family);
  return core + spec.offset;
}

double mass_at_esssup(const EnvSpec& spec) {
  if (const auto* b = std::get_if<Bernoulli>(&spec.family)) return b->high > b->low ? b->p : 1.0 - b->p;
  if (std::holds_alternative<Constant>(spec.family)) return 1.0;
  return 0.0;
}

ConditionReport check_conditions(const EnvSpec& spec, int d) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  ConditionReport r;
  r.d = d;
  r.radius = mgf_radius(spec);
  r.esssup = esssup(spec);
  if (const auto* p = std::get_if<Pareto>(&spec.family)) {
    // 1 - F(x) ~ (x/scale)^-a: the upper integral converges iff a/(d+1) > 1.
    r.hyp1 = p->a / static_cast<double>(d + 1) > 1.0;
    r.hyp2 = p->a > 1.0;
    if (p->a > 1.0) r.theta_moment = 0.5 * (1.0 + p->a);
  } else {
    // Exponential or lighter upper tails; every family is bounded below or gaussian.
    r.hyp1 = true;
    r.hyp2 = true;
    r.theta_moment = 2.0;
  }
  r.hyp3 = true;
  if (r.radius > 0) {
    r.explodes = r.radius == kInf ? r.esssup == kInf : log_mgf(spec, r.radius) == kInf;
  }
  return r;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw NumericError("normal_quantile: p outside [0, 1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
               1.27045825245236838258e+0) * r + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
               1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
               2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
               7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0 ? -val : val;
}

nlohmann::json to_json(const EnvSpec& spec) {
  nlohmann::json params = std::visit(
      Overloaded{
          [](const Gaussian& g) { return nlohmann::json{{"mean", g.mean}, {"stddev", g.stddev}}; },
          [](const Exponential& e) { return nlohmann::json{{"rate", e.rate}}; },
          [](const Pareto& p) { return nlohmann::json{{"a", p.a}, {"scale", p.scale}}; },
          [](const Bernoulli& b) { return nlohmann::json{{"p", b.p}, {"high", b.high}, {"low", b.low}}; },
          [](const Uniform& u) { return nlohmann::json{{"lo", u.lo}, {"hi", u.hi}}; },
          [](const Constant& c) { return nlohmann::json{{"value", c.value}}; },
      },
      spec.family);
  return {{"family", spec.family_name()}, {"params", params}, {"offset", spec.offset}, {"version", 1}};
}

EnvSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("environment spec must be a JSON object");
  if (j.contains("version") && j.at("version") != 1) throw ConfigError("unsupported spec version");
  if (!j.contains("family") || !j.at("family").is_string()) throw ConfigError("spec needs a string \"family\"");
  const std::string family = j.at("family");
  const nlohmann::json params = j.value("params", nlohmann::json::object());
  if (!params.is_object()) throw ConfigError("spec \"params\" must be an object");
  const auto num = [&](const char* key, std::optional<double> fallback) -> double {
    if (params.contains(key)) {
      if (!params.at(key).is_number()) throw ConfigError(std::string("spec param ") + key + " must be a number");
      return params.at(key).get<double>();
    }
    if (!fallback) throw ConfigError("spec " + family + " requires param \"" + key + "\"");
    return *fallback;
  };
  const auto allowed = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : params.items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) throw ConfigError("unknown param \"" + k + "\" for family " + family);
    }
  };
  double offset = 0.0;
  if (j.contains("offset")) {
    if (!j.at("offset").is_number()) throw ConfigError("spec offset must be a number");
    offset = j.at("offset").get<double>();
  }
  EnvSpec s;
  if (family == "gaussian") {
    allowed({"mean", "stddev"});
    s = EnvSpec{Gaussian{num("mean", 0.0), num("stddev", 1.0)}, offset};
  } else if (family == "exponential") {
    allowed({"rate"});
    s = EnvSpec{Exponential{num("rate", 1.0)}, offset};
  } else if (family == "pareto") {
    allowed({"a", "scale"});
    s = EnvSpec{Pareto{num("a", std::nullopt), num("scale", 1.0)}, offset};
  } else if (family == "bernoulli") {
    allowed({"p", "high", "low"});
    s = EnvSpec{Bernoulli{num("p", std::nullopt), num("high", 1.0), num("low", 0.0)}, offset};
  } else if (family == "uniform") {
    allowed({"lo", "hi"});
    s = EnvSpec{Uniform{num("lo", std::nullopt), num("hi", std::nullopt)}, offset};
  } else if (family == "constant") {
    allowed({"value"});
    s = EnvSpec{Constant{num("value", std::nullopt)}, offset};
  } else {
    throw ConfigError("unknown environment family \"" + family + "\"");
  }
  s.validate();
  return s;
}

EnvSpec parse_spec(const std::string& text) {
  if (text == "gauss1") return EnvSpec::gaussian(0.0, 1.0);
  if (text == "exp1") return EnvSpec::exponential(1.0);
  if (text == "exp1c") return EnvSpec::exponential(1.0, -1.0);
  if (text == "pareto4") return EnvSpec::pareto(4.0);
  if (text == "bern04") return EnvSpec::bernoulli(0.4);
  if (text == "unif01") return EnvSpec::uniform(0.0, 1.0);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("spec is neither a preset name nor valid JSON: " + text);
  }
  return spec_from_json(j);
}

EnvField::EnvField(EnvSpec spec, std::uint64_t master_seed, std::uint64_t replica_id)
    : spec_(std::move(spec)),
      master_seed_(master_seed),
      replica_id_(replica_id),
      base_(mix_key(mix_key(stream::kEnvironment, master_seed), replica_id)) {
  spec_.validate();
}

void EnvField::eta_run(int j, const Site& start, int axis, int count, double* out) const {
  const std::uint64_t layer = mix_key(base_, static_cast<std::uint64_t>(j));
  Site x = start;
  for (int k = 0; k < count; ++k, x[axis] += 2) out[k] = to_unit_open(mix_key(layer, pack_site(x)));
  spec_.quantile_in_place(out, count);
}

double sample_eta(const EnvField& field, int j, const Site& x) { return field.eta(j, x); }

}  // namespace polylab::env
