#pragma once

// Epsilon-atoms of the predictive law nu_j and their Cesaro statistics.

#include <functional>
#include <string>
#include <vector>

#include "polylab/common.hpp"
#include "polylab/dp.hpp"
#include "polylab/lattice.hpp"

namespace polylab::atoms {

struct AtomReport {
  int j = 0;
  double eps = 0.0;
  double delta = 0.0;
  std::vector<Site> atom_sites;  // nu_j(x) > eps, lexicographic order
  double atom_mass = 0.0;        // nu_j(atom_sites)
  double favorite_mass = 0.0;    // max_x nu_j(x)
  bool event_mass_ge_delta = false;  // atom_mass >= delta
  bool event_has_atom = false;       // favorite_mass > eps
};

/// Throws ConfigError when eps or delta lie outside (0, 1) or nu's total is
/// more than 1e-6 away from 1.
AtomReport atom_report(const LatticeSlice& nu, double eps, double delta);

/// eps_j as a function of the step index.
class EpsSchedule {
 public:
  enum class Kind { fixed, inv_log, power };

  static EpsSchedule fixed(double eps);
  /// c / ln(j + 2)
  static EpsSchedule inv_log(double c);
  /// c * j^(-gamma)
  static EpsSchedule power(double c, double gamma);
  /// "0.05", "fixed:0.05", "invlog:1", "power:0.5:0.3".
  static EpsSchedule parse(const std::string& text);

  double at(int j) const;
  Kind kind() const { return kind_; }
  std::string describe() const;

 private:
  EpsSchedule(Kind kind, double c, double gamma) : kind_(kind), c_(c), gamma_(gamma) {}
  Kind kind_;
  double c_;
  double gamma_;
};

/// Running Cesaro means of atom statistics for one schedule.
class CesaroTrace {
 public:
  CesaroTrace(EpsSchedule schedule, double delta);

  /// Reports must arrive as j = 1, 2, ... computed at eps = schedule.at(j).
  void add(const AtomReport& r);

  int n() const { return n_; }
  double atom_mass() const { return mean(mass_sum_); }
  double has_atom_rate() const { return mean(has_atom_sum_); }
  double mass_ge_delta_rate() const { return mean(ge_delta_sum_); }
  double favorite_mass() const { return mean(favorite_sum_); }
  const EpsSchedule& schedule() const { return schedule_; }
  double delta() const { return delta_; }

 private:
  double mean(double s) const { return n_ == 0 ? 0.0 : s / n_; }

  EpsSchedule schedule_;
  double delta_;
  int n_ = 0;
  double mass_sum_ = 0.0;
  double has_atom_sum_ = 0.0;
  double ge_delta_sum_ = 0.0;
  double favorite_sum_ = 0.0;
};

/// dp observer that feeds one trace per schedule and forwards every report.
class LocalizationTracker {
 public:
  using Sink = std::function<void(std::size_t schedule_index, const AtomReport&)>;

  LocalizationTracker(std::vector<EpsSchedule> schedules, double delta, Sink sink = {});

  void operator()(const dp::StepView& step);
  const std::vector<CesaroTrace>& traces() const { return traces_; }

 private:
  std::vector<CesaroTrace> traces_;
  double delta_;
  Sink sink_;
};

}  // namespace polylab::atoms
