#pragma once

// Environment laws, their analytic metadata, and the lazily realized random
// field eta(j, x).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "json.hpp"
#include "polylab/common.hpp"

namespace polylab {

/// Anything that assigns a real weight to each space-time site.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual double eta(int j, const Site& x) const = 0;
  /// eta at start, start + 2e_axis, ... (count sites); the same values eta() gives.
  virtual void eta_run(int j, const Site& start, int axis, int count, double* out) const {
    Site x = start;
    for (int k = 0; k < count; ++k, x[axis] += 2) out[k] = eta(j, x);
  }
};

}  // namespace polylab

namespace polylab::env {

struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
};
struct Exponential {
  double rate = 1.0;
};
/// X = scale * U^(-1/a), support [scale, inf).
struct Pareto {
  double a = 0.0;
  double scale = 1.0;
};
/// high with probability p, low otherwise.
struct Bernoulli {
  double p = 0.5;
  double high = 1.0;
  double low = 0.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
/// Degenerate point mass. Only for tests and calibration; the CLI refuses it.
struct Constant {
  double value = 0.0;
};

using Family = std::variant<Gaussian, Exponential, Pareto, Bernoulli, Uniform, Constant>;

/// Law of eta: a draw from `family` plus `offset`.
struct EnvSpec {
  Family family;
  double offset = 0.0;

  static EnvSpec gaussian(double mean = 0.0, double stddev = 1.0, double offset = 0.0);
  static EnvSpec exponential(double rate = 1.0, double offset = 0.0);
  static EnvSpec pareto(double a, double scale = 1.0, double offset = 0.0);
  static EnvSpec bernoulli(double p, double high = 1.0, double low = 0.0, double offset = 0.0);
  static EnvSpec uniform(double lo, double hi, double offset = 0.0);
  static EnvSpec constant(double value);

  /// Throws ConfigError when parameters break the family's invariants.
  void validate() const;
  bool degenerate() const { return std::holds_alternative<Constant>(family); }
  std::string family_name() const;

  /// Inverse CDF at u in (0, 1).
  double quantile(double u) const;
  /// quantile() applied in place to count values.
  void quantile_in_place(double* u, int count) const;

  friend bool operator==(const EnvSpec& a, const EnvSpec& b);
};

/// ln Q(exp(beta * eta)), +inf where the moment generating function diverges.
double log_mgf(const EnvSpec& spec, double beta);

/// sup{beta >= 0 : log_mgf(beta) < inf}.
double mgf_radius(const EnvSpec& spec);

double mean(const EnvSpec& spec);
/// +inf when the second moment diverges.
double variance(const EnvSpec& spec);
double esssup(const EnvSpec& spec);
/// Q(eta = esssup eta); 0 for continuous laws or an infinite esssup.
double mass_at_esssup(const EnvSpec& spec);

struct ConditionReport {
  int d = 1;
  bool hyp1 = false;  // int_0^inf (1-F)^(1/(d+1)) < inf
  bool hyp2 = false;  // Q|eta| < inf
  bool hyp3 = false;  // int_-inf^0 F^(1/(d+1)) < inf
  bool explodes = false;  // lambda(R)/R = inf, esssup when R = inf; false when R = 0
  std::optional<double> theta_moment;  // some theta > 1 with Q|eta|^theta < inf
  double radius = 0.0;
  double esssup = 0.0;
};

/// Every flag is an analytic per-family fact; nothing is integrated numerically.
ConditionReport check_conditions(const EnvSpec& spec, int d);

/// Standard normal quantile, Wichura's AS241 (PPND16), relative accuracy ~1e-16.
double normal_quantile(double p);

// JSON schema (version 1):
//   {"family": "gaussian"|"exponential"|"pareto"|"bernoulli"|"uniform",
//    "params": {...}, "offset": number, "version": 1}
// params: gaussian {mean=0, stddev=1}; exponential {rate=1}; pareto {a, scale=1};
//         bernoulli {p, high=1, low=0}; uniform {lo, hi}.
// "version" and "offset" are optional on input.
nlohmann::json to_json(const EnvSpec& spec);
EnvSpec spec_from_json(const nlohmann::json& j);

/// Accepts either a JSON object literal or a preset name
/// (gauss1, exp1, exp1c, pareto4, bern04, unif01).
EnvSpec parse_spec(const std::string& text);

/// The realized environment for one replica: eta(j, x) is a pure function of
/// (spec, master_seed, replica_id, j, x).
class EnvField final : public Environment {
 public:
  EnvField(EnvSpec spec, std::uint64_t master_seed, std::uint64_t replica_id);

  double eta(int j, const Site& x) const override {
    return spec_.quantile(uniform(j, x));
  }
  void eta_run(int j, const Site& start, int axis, int count, double* out) const override;
  double uniform(int j, const Site& x) const {
    return to_unit_open(mix_key(mix_key(base_, static_cast<std::uint64_t>(j)), pack_site(x)));
  }

  const EnvSpec& spec() const { return spec_; }
  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t replica_id() const { return replica_id_; }

 private:
  EnvSpec spec_;
  std::uint64_t master_seed_;
  std::uint64_t replica_id_;
  std::uint64_t base_;
};

double sample_eta(const EnvField& field, int j, const Site& x);

/// Hand-specified weights with a default for every other site.
class TableField final : public Environment {
 public:
  explicit TableField(double fallback = 0.0) : fallback_(fallback) {}
  TableField& set(int j, const Site& x, double value) {
    values_[{j, x}] = value;
    return *this;
  }
  double eta(int j, const Site& x) const override {
    const auto it = values_.find({j, x});
    return it == values_.end() ? fallback_ : it->second;
  }

 private:
  double fallback_;
  std::map<std::pair<int, Site>, double> values_;
};

}  // namespace polylab::env
