#include "polylab/atoms.hpp"

#include <charconv>
#include <cmath>

namespace polylab::atoms {

AtomReport atom_report(const LatticeSlice& nu, double eps, double delta) {
  if (!(eps > 0 && eps < 1)) throw ConfigError("eps must lie in (0, 1)");
  if (!(delta > 0 && delta < 1)) throw ConfigError("delta must lie in (0, 1)");
  const double total = nu.total();
  if (!(std::abs(total - 1.0) <= 1e-6))
    throw ConfigError("predictive law is not normalized (total " + std::to_string(total) + ")");

  AtomReport r;
  r.j = nu.j();
  r.eps = eps;
  r.delta = delta;
  nu.for_each([&](const Site& x, double v) {
    r.favorite_mass = std::max(r.favorite_mass, v);
    if (v > eps) {
      r.atom_sites.push_back(x);
      r.atom_mass += v;
    }
  });
  r.event_mass_ge_delta = r.atom_mass >= delta;
  r.event_has_atom = r.favorite_mass > eps;
  return r;
}

EpsSchedule EpsSchedule::fixed(double eps) {
  if (!(eps > 0 && eps < 1)) throw ConfigError("fixed eps must lie in (0, 1)");
  return EpsSchedule(Kind::fixed, eps, 0.0);
}

EpsSchedule EpsSchedule::inv_log(double c) {
  // eps_1 = c / ln 3 must stay below 1.
  if (!(c > 0 && c < std::log(3.0))) throw ConfigError("invlog schedule needs 0 < c < ln 3");
  return EpsSchedule(Kind::inv_log, c, 0.0);
}

EpsSchedule EpsSchedule::power(double c, double gamma) {
  if (!(c > 0 && c < 1)) throw ConfigError("power schedule needs 0 < c < 1");
  if (!(gamma > 0 && std::isfinite(gamma))) throw ConfigError("power schedule needs gamma > 0");
  return EpsSchedule(Kind::power, c, gamma);
}

EpsSchedule EpsSchedule::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  const auto num = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts.at(i), &used);
      if (used != parts.at(i).size()) throw std::invalid_argument(parts.at(i));
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad eps schedule \"" + text + "\"");
    }
  };
  if (parts.size() == 1) return fixed(num(0));
  if (parts.size() == 2 && parts[0] == "fixed") return fixed(num(1));
  if (parts.size() == 2 && parts[0] == "invlog") return inv_log(num(1));
  if (parts.size() == 3 && parts[0] == "power") return power(num(1), num(2));
  throw ConfigError("bad eps schedule \"" + text + "\" (expected fixed:E, invlog:C or power:C:GAMMA)");
}

double EpsSchedule::at(int j) const {
  if (j < 1) throw ConfigError("schedule index must be >= 1");
  switch (kind_) {
    case Kind::fixed: return c_;
    case Kind::inv_log: return c_ / std::log(j + 2.0);
    case Kind::power: return c_ * std::pow(static_cast<double>(j), -gamma_);
  }
  return c_;
}

std::string EpsSchedule::describe() const {
  const auto shortest = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  switch (kind_) {
    case Kind::fixed: return "fixed:" + shortest(c_);
    case Kind::inv_log: return "invlog:" + shortest(c_);
    case Kind::power: return "power:" + shortest(c_) + ":" + shortest(gamma_);
  }
  return {};
}

CesaroTrace::CesaroTrace(EpsSchedule schedule, double delta) : schedule_(schedule), delta_(delta) {
  if (!(delta > 0 && delta < 1)) throw ConfigError("delta must lie in (0, 1)");
}

void CesaroTrace::add(const AtomReport& r) {
  if (r.j != n_ + 1)
    throw ConfigError("atom reports out of order: got j=" + std::to_string(r.j) + ", expected " +
                      std::to_string(n_ + 1));
  if (r.eps != schedule_.at(r.j)) throw ConfigError("atom report eps does not match the schedule");
  if (r.delta != delta_) throw ConfigError("atom report delta does not match the trace");
  ++n_;
  mass_sum_ += r.atom_mass;
  has_atom_sum_ += r.event_has_atom ? 1.0 : 0.0;
  ge_delta_sum_ += r.event_mass_ge_delta ? 1.0 : 0.0;
  favorite_sum_ += r.favorite_mass;
}

LocalizationTracker::LocalizationTracker(std::vector<EpsSchedule> schedules, double delta, Sink sink)
    : delta_(delta), sink_(std::move(sink)) {
  traces_.reserve(schedules.size());
  for (const auto& s : schedules) traces_.emplace_back(s, delta);
}

void LocalizationTracker::operator()(const dp::StepView& step) {
  for (std::size_t i = 0; i < traces_.size(); ++i) {
    const AtomReport r = atom_report(step.nu, traces_[i].schedule().at(step.j), delta_);
    traces_[i].add(r);
    if (sink_) sink_(i, r);
  }
}

}  // namespace polylab::atoms
