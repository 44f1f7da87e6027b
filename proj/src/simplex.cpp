#include "polylab/simplex.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "polylab/parallel.hpp"

namespace polylab::simplex {

SimplexPoint::SimplexPoint(std::vector<double> lambda) : lambda_(std::move(lambda)) {
  if (lambda_.empty()) throw ConfigError("simplex point has no coordinates");
  double total = 0.0;
  for (double v : lambda_) {
    if (!(v >= 0 && std::isfinite(v))) throw ConfigError("simplex point has a negative or non-finite entry");
    total += v;
  }
  if (!(std::abs(total - 1.0) <= 1e-12))
    throw ConfigError("simplex point sums to " + std::to_string(total) + ", not 1");
}

ConstraintSet ConstraintSet::atom_mass(double eps, double delta, int n) {
  if (!(delta > 0.5 && delta < 1)) throw ConfigError("atom-mass constraint needs delta in (1/2, 1)");
  if (!(eps > 0 && eps < 1 - delta)) throw ConfigError("atom-mass constraint needs eps in (0, 1 - delta)");
  const double ratio = (1 - delta) / eps;
  const long block = std::lround(ratio);
  if (block < 1 || std::abs(ratio - static_cast<double>(block)) > 1e-9 * ratio)
    throw ConfigError("(1 - delta)/eps must be a positive integer");
  if (n < block + 1) throw ConfigError("dimension must be at least (1 - delta)/eps + 1 = " + std::to_string(block + 1));
  return ConstraintSet(Kind::atom_mass, eps, delta, n, static_cast<int>(block));
}

ConstraintSet ConstraintSet::cap(int k, int n) {
  if (k < 1) throw ConfigError("cap constraint needs k >= 1");
  if (n < k) throw ConfigError("cap constraint needs n >= k");
  return ConstraintSet(Kind::cap, 1.0 / k, 0.0, n, k);
}

bool ConstraintSet::contains(const SimplexPoint& p, double tol) const {
  if (static_cast<int>(p.size()) != n_) return false;
  if (kind_ == Kind::cap) return *std::max_element(p.values().begin(), p.values().end()) <= eps_ + tol;
  double atoms = 0.0;
  for (double v : p.values())
    if (v > eps_) atoms += v;
  return atoms <= delta_ + tol;
}

SampleBank::SampleBank(const env::EnvSpec& spec, double beta, int rows, int width, std::uint64_t seed)
    : rows_(rows), width_(width) {
  spec.validate();
  if (!std::isfinite(env::mean(spec))) throw ConfigError("sample bank needs E|ln X| < inf (finite mean of eta)");
  if (!std::isfinite(beta)) throw ConfigError("beta must be finite");
  if (rows < 2 || width < 1) throw ConfigError("sample bank needs at least 2 rows and 1 column");
  log_x_.resize(static_cast<std::size_t>(rows) * width);
  const std::uint64_t base = mix_key(stream::kSampleBank, seed);
  for (int r = 0; r < rows; ++r) {
    const std::uint64_t key = mix_key(base, static_cast<std::uint64_t>(r));
    double* out = log_x_.data() + static_cast<std::size_t>(r) * width;
    for (int i = 0; i < width; ++i) out[i] = to_unit_open(mix_key(key, static_cast<std::uint64_t>(i)));
    spec.quantile_in_place(out, width);
    for (int i = 0; i < width; ++i) {
      out[i] *= beta;
      if (!std::isfinite(out[i])) throw NumericError("sample bank draw overflowed");
    }
  }
}

SampleBank::SampleBank(std::vector<double> log_x, int rows, int width)
    : log_x_(std::move(log_x)), rows_(rows), width_(width) {
  if (rows < 2 || width < 1) throw ConfigError("sample bank needs at least 2 rows and 1 column");
  if (log_x_.size() != static_cast<std::size_t>(rows) * width) throw ConfigError("sample bank size mismatch");
  for (double v : log_x_)
    if (!std::isfinite(v)) throw ConfigError("sample bank entries must be finite");
}

SampleBank SampleBank::permuted(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != width_) throw ConfigError("permutation has the wrong length");
  std::vector<double> out(log_x_.size());
  for (int r = 0; r < rows_; ++r)
    for (int i = 0; i < width_; ++i)
      out[static_cast<std::size_t>(r) * width_ + i] = row(r)[perm[static_cast<std::size_t>(i)]];
  return SampleBank(std::move(out), rows_, width_);
}

McValue mc_objective(const SimplexPoint& point, const SampleBank& bank, std::vector<double>* gradient) {
  const int n = static_cast<int>(point.size());
  if (n > bank.width()) throw ConfigError("point has more coordinates than the bank has columns");
  std::vector<int> support;
  for (int i = 0; i < n; ++i)
    if (point[static_cast<std::size_t>(i)] > 0) support.push_back(i);
  if (gradient) gradient->assign(static_cast<std::size_t>(n), 0.0);

  std::vector<double> terms(support.size());
  RunningStats stats;
  for (int r = 0; r < bank.rows(); ++r) {
    const double* y = bank.row(r);
    double top = -kInf;
    for (int i : support) top = std::max(top, y[i]);
    for (std::size_t k = 0; k < support.size(); ++k)
      terms[k] = point[static_cast<std::size_t>(support[k])] * std::exp(y[support[k]] - top);
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    const double value = top + std::log(s);
    if (!std::isfinite(value)) throw NumericError("objective sample is not finite at row " + std::to_string(r));
    stats.add(value);
    if (gradient)
      for (int i = 0; i < n; ++i) (*gradient)[static_cast<std::size_t>(i)] += std::exp(y[i] - top) / s;
  }
  if (gradient)
    for (double& g : *gradient) g /= bank.rows();
  return {stats.mean(), stats.std_error()};
}

SimplexPoint closed_form_minimizer(const ConstraintSet& c) {
  std::vector<double> v(static_cast<std::size_t>(c.n()), 0.0);
  if (c.kind() == ConstraintSet::Kind::cap) {
    std::fill(v.begin(), v.begin() + c.block(), c.eps());
  } else {
    v[0] = c.delta();
    std::fill(v.begin() + 1, v.begin() + 1 + c.block(), c.eps());
  }
  return SimplexPoint(std::move(v));
}

namespace {

std::vector<double> onto_simplex(const std::vector<double>& v) {
  if (std::all_of(v.begin(), v.end(), [](double x) { return x >= 0; }) &&
      std::abs(std::accumulate(v.begin(), v.end(), 0.0) - 1.0) <= 1e-12)
    return v;
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0) tau = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  return out;
}

// Adds `amount` to coordinates below `cap`, none exceeding it.
void water_fill(std::vector<double>& x, double amount, double cap) {
  for (int round = 0; amount > 0 && round <= static_cast<int>(x.size()); ++round) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < cap) open.push_back(i);
    if (open.empty()) break;
    const double share = amount / static_cast<double>(open.size());
    amount = 0.0;
    for (std::size_t i : open) {
      const double room = cap - x[i];
      if (share >= room) {
        x[i] = cap;
        amount += share - room;
      } else {
        x[i] = std::min(x[i] + share, cap);
      }
    }
  }
  if (amount > 1e-13) throw ProjectionError("no room left below eps for " + std::to_string(amount) + " of mass");
}

std::vector<double> repair_atom_mass(std::vector<double> x, double eps, double delta, int block) {
  double mass = 0.0;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < x.size(); ++i) {
    order.push_back(i);
    if (x[i] > eps) mass += x[i];
  }
  if (mass <= delta) return x;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  const std::size_t atoms =
      std::min<std::size_t>(static_cast<std::size_t>(std::count_if(x.begin(), x.end(), [&](double v) { return v > eps; })),
                            x.size() - static_cast<std::size_t>(block));

  // The rest is capped at eps and holds at least 1 - delta.
  std::vector<double> rest;
  double rest_mass = 0.0;
  for (std::size_t k = atoms; k < order.size(); ++k) {
    rest.push_back(std::min(x[order[k]], eps));
    rest_mass += rest.back();
  }
  const double target = std::max(rest_mass, 1.0 - delta);
  if (target > rest_mass) water_fill(rest, target - rest_mass, eps);
  double atom_total = 0.0;
  for (std::size_t k = 0; k < atoms; ++k) atom_total += x[order[k]];
  const double scale = (1.0 - target) / atom_total;
  for (std::size_t k = 0; k < atoms; ++k) x[order[k]] *= scale;
  for (std::size_t k = atoms; k < order.size(); ++k) x[order[k]] = rest[k - atoms];
  return x;
}

std::vector<double> onto_capped_simplex(const std::vector<double>& v, double cap) {
  const auto mass = [&](double tau) {
    double s = 0.0;
    for (double x : v) s += std::clamp(x - tau, 0.0, cap);
    return s;
  };
  double lo = *std::min_element(v.begin(), v.end()) - cap;
  double hi = *std::max_element(v.begin(), v.end());
  for (int it = 0; it < 200 && hi - lo > 0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - lo, 0.0, cap);
  double total = 0.0;
  for (double x : out) total += x;
  double excess = total - 1.0;
  for (std::size_t i = 0; i < out.size() && excess != 0.0; ++i) {
    const double shift = std::clamp(excess, out[i] - cap, out[i]);
    out[i] -= shift;
    excess -= shift;
  }
  return out;
}

}  // namespace

SimplexPoint project(const ConstraintSet& c, const std::vector<double>& v) {
  if (static_cast<int>(v.size()) != c.n()) throw ConfigError("vector has the wrong dimension for the constraint");
  for (double x : v)
    if (!std::isfinite(x)) throw ProjectionError("cannot project a non-finite vector");
  std::vector<double> x =
      c.kind() == ConstraintSet::Kind::cap ? onto_capped_simplex(v, c.eps()) : repair_atom_mass(onto_simplex(v), c.eps(), c.delta(), c.block());
  SimplexPoint p(std::move(x));
  if (!c.contains(p)) throw ProjectionError("projection left the constraint set");
  return p;
}

SimplexPoint random_feasible_point(const ConstraintSet& c, std::uint64_t seed, std::uint64_t trial) {
  const std::uint64_t key = mix_key(mix_key(stream::kSimplexStart, seed), trial);
  // Powers of uniforms spread the draws between flat and concentrated points.
  const double power = 1.0 + 7.0 * to_unit_open(mix_key(key, ~0ULL));
  std::vector<double> v(static_cast<std::size_t>(c.n()));
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::pow(to_unit_open(mix_key(key, i)), power);
    total += v[i];
  }
  for (double& x : v) x /= total;
  return project(c, v);
}

Minimum constrained_minimize(const ConstraintSet& c, const SampleBank& bank, int restarts, std::uint64_t seed,
                             int threads) {
  if (restarts < 0) throw ConfigError("restarts must be >= 0");
  if (c.n() > bank.width()) throw ConfigError("constraint dimension exceeds the bank width");

  const auto descend = [&](std::size_t start) {
    SimplexPoint x = start == 0 ? closed_form_minimizer(c) : random_feasible_point(c, seed, start);
    std::vector<double> g, gy;
    McValue f = mc_objective(x, bank, &g);
    double step = 0.1;
    int it = 0;
    for (; it < 400 && step > 1e-7; ++it) {
      std::vector<double> trial(x.values());
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] -= step * g[i];
      SimplexPoint y = project(c, trial);
      const McValue fy = mc_objective(y, bank, &gy);
      if (fy.estimate < f.estimate - 1e-13) {
        x = std::move(y);
        f = fy;
        g.swap(gy);
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    return Minimum{x, f, static_cast<int>(start), it};
  };

  const auto results = parallel_map(static_cast<std::size_t>(restarts) + 1, threads, descend);
  std::size_t best = 0;
  for (std::size_t k = 1; k < results.size(); ++k)
    if (results[k].value.estimate < results[best].value.estimate) best = k;
  return results[best];
}

double l1_distance_up_to_permutation(const SimplexPoint& a, const SimplexPoint& b) {
  std::vector<double> x = a.values(), y = b.values();
  const std::size_t n = std::max(x.size(), y.size());
  x.resize(n, 0.0);
  y.resize(n, 0.0);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) d += std::abs(x[i] - y[i]);
  return d;
}

namespace {

constexpr int kGrid = 17;
constexpr int kChunks = 64;

// Row means of ln((1/n) sum_i exp(beta_k eta_i)) for beta_k = lo + k h.
std::vector<RunningStats> utile_grid(const env::EnvSpec& spec, int n, int m, std::uint64_t seed, double lo, double h,
                                     int threads) {
  const std::uint64_t base = mix_key(mix_key(stream::kSampleBank, seed), static_cast<std::uint64_t>(n));
  const int chunk_rows = (m + kChunks - 1) / kChunks;
  const auto parts = parallel_map(kChunks, threads, [&](std::size_t chunk) {
    std::vector<RunningStats> stats(kGrid);
    std::vector<double> eta(static_cast<std::size_t>(n));
    std::array<double, kGrid> acc{};
    const int first = static_cast<int>(chunk) * chunk_rows;
    const int last = std::min(m, first + chunk_rows);
    for (int r = first; r < last; ++r) {
      const std::uint64_t key = mix_key(base, static_cast<std::uint64_t>(r));
      for (int i = 0; i < n; ++i) eta[static_cast<std::size_t>(i)] = to_unit_open(mix_key(key, static_cast<std::uint64_t>(i)));
      spec.quantile_in_place(eta.data(), n);
      const double top = *std::max_element(eta.begin(), eta.end());
      acc.fill(0.0);
      for (double e : eta) {
        double cur = std::exp(lo * (e - top));
        const double mult = std::exp(h * (e - top));
        for (int k = 0; k < kGrid; ++k) {
          acc[static_cast<std::size_t>(k)] += cur;
          cur *= mult;
        }
      }
      for (int k = 0; k < kGrid; ++k) {
        const double beta = lo + k * h;
        stats[static_cast<std::size_t>(k)].add(beta * top + std::log(acc[static_cast<std::size_t>(k)] / n));
      }
    }
    return stats;
  });
  std::vector<RunningStats> total(kGrid);
  for (const auto& p : parts)
    for (int k = 0; k < kGrid; ++k) total[static_cast<std::size_t>(k)].merge(p[static_cast<std::size_t>(k)]);
  return total;
}

}  // namespace

UtileTable lemma_utile_check(const env::EnvSpec& spec, double a, double b, const std::vector<int>& n_list, int m,
                             std::uint64_t seed, int threads) {
  spec.validate();
  const double radius = env::mgf_radius(spec);
  if (!(a > 0 && a < b)) throw ConfigError("beta interval needs 0 < a < b");
  if (!(b < radius)) throw ConfigError("beta interval must end below the mgf radius " + std::to_string(radius));
  if (n_list.empty()) throw ConfigError("n_list is empty");
  for (int n : n_list)
    if (n < 1) throw ConfigError("every n must be >= 1");
  if (m < 2) throw ConfigError("m must be >= 2");

  UtileTable t;
  t.a = a;
  t.b = b;
  t.m = m;
  t.seed = seed;

  // ln E[X^beta] is convex in beta: golden section, then the endpoints.
  {
    const double g = (std::sqrt(5.0) - 1) / 2;
    double lo = a, hi = b;
    for (int it = 0; it < 200; ++it) {
      const double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
      if (env::log_mgf(spec, x1) <= env::log_mgf(spec, x2))
        hi = x2;
      else
        lo = x1;
    }
    t.limit_beta = 0.5 * (lo + hi);
    t.limit = env::log_mgf(spec, t.limit_beta);
    for (double e : {a, b})
      if (env::log_mgf(spec, e) <= t.limit) {
        t.limit = env::log_mgf(spec, e);
        t.limit_beta = e;
      }
  }

  for (int n : n_list) {
    const double h = (b - a) / (kGrid - 1);
    const auto grid = utile_grid(spec, n, m, seed, a, h, threads);
    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (grid[k].mean() < grid[best].mean()) best = k;
    UtileRow row{n, a + static_cast<double>(best) * h, grid[best].mean(), grid[best].std_error()};
    if (best > 0 && best + 1 < grid.size()) {
      const double lo = row.beta_star - h, zh = 2 * h / (kGrid - 1);
      const auto zoom = utile_grid(spec, n, m, seed, lo, zh, threads);
      for (std::size_t k = 0; k < zoom.size(); ++k)
        if (zoom[k].mean() < row.value) row = {n, lo + static_cast<double>(k) * zh, zoom[k].mean(), zoom[k].std_error()};
    }
    t.rows.push_back(row);
  }
  for (std::size_t k = 1; k < t.rows.size(); ++k)
    if (t.rows[k].value < t.rows[k - 1].value - 3 * std::hypot(t.rows[k].std_error, t.rows[k - 1].std_error))
      t.nondecreasing = false;
  return t;
}

}  // namespace polylab::simplex
