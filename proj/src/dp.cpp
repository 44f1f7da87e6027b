#include "polylab/dp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace polylab::dp {
namespace {

void check_shape(int n, int d) {
  if (n < 1) throw ConfigError("horizon n must be >= 1");
  if (d < 1 || d > 3) throw ConfigError("dimension d must be 1, 2 or 3");
  if (n > kMaxCoordinate) throw ConfigError("horizon n exceeds the site packing range");
}

/// Visits reachable cells of `b` at time j (|x|_1 <= j, parity of j) in
/// lexicographic order, passing the site and its dense index in b.
template <class F>
void for_each_cone_cell(const Box& b, int j, F&& f) {
  const std::size_t e1 = static_cast<std::size_t>(b.extent(1));
  const std::size_t e2 = static_cast<std::size_t>(b.extent(2));
  for (int x0 = b.lo[0]; x0 <= b.hi[0]; ++x0) {
    const int r0 = j - std::abs(x0);
    if (r0 < 0) continue;
    const int y_lo = std::max(b.lo[1], -r0), y_hi = std::min(b.hi[1], r0);
    for (int x1 = y_lo; x1 <= y_hi; ++x1) {
      const int r1 = r0 - std::abs(x1);
      int z_lo = std::max(b.lo[2], -r1);
      const int z_hi = std::min(b.hi[2], r1);
      if (((x0 + x1 + z_lo - j) & 1) != 0) ++z_lo;
      const std::size_t row =
          (static_cast<std::size_t>(x0 - b.lo[0]) * e1 + static_cast<std::size_t>(x1 - b.lo[1])) * e2;
      for (int z = z_lo; z <= z_hi; z += 2) f(Site{x0, x1, z}, row + static_cast<std::size_t>(z - b.lo[2]));
    }
  }
}

/// Neighbor offsets in fixed order: -e0, +e0, -e1, +e1, -e2, +e2.
Site neighbor(const Site& x, int k) {
  Site y = x;
  y[k / 2] += (k % 2 == 0) ? -1 : 1;
  return y;
}

struct Source {
  const RowSpan* row = nullptr;
  int dz = 0;  // the cell at z reads source cell z + dz
};

std::string budget_message(int n, int d, std::size_t need, std::size_t budget) {
  return "memory budget exceeded: n=" + std::to_string(n) + ", d=" + std::to_string(d) + " needs " +
         std::to_string(need) + " bytes > budget " + std::to_string(budget);
}

std::size_t cone_cells(int n, int d) {
  std::size_t c = 1;
  for (int a = 0; a < d; ++a) c *= static_cast<std::size_t>(2 * n + 1);
  return c;
}

std::size_t reachable_cells(int n, int d) {
  std::size_t c = 0;
  const Box cone = Box::cone(d, n);
  for_each_cone_cell(cone, n, [&](const Site&, std::size_t) { ++c; });
  return c;
}

constexpr std::size_t kEvolveArrays = 5;

}  // namespace

std::size_t evolve_memory_estimate(int n, int d) {
  return kEvolveArrays * sizeof(double) * reachable_cells(n, d);
}

PolymerState evolve(const Environment& env, double beta, int n, int d, const Observer& observer,
                    const EvolveOptions& options) {
  check_shape(n, d);
  if (!std::isfinite(beta) || beta < 0) throw ConfigError("beta must be finite and >= 0");
  if (!(options.clamp > 0)) throw ConfigError("truncation level must be > 0");
  if (!(options.prune_ratio >= 0 && options.prune_ratio < 1)) throw ConfigError("prune_ratio must lie in [0, 1)");
  const bool pruning = options.prune_ratio > 0;
  if (!pruning) {
    const std::size_t need = evolve_memory_estimate(n, d);
    if (need > options.memory_budget) throw BudgetError(budget_message(n, d, need, options.memory_budget));
  }

  const double kernel_norm = 2.0 * d;
  const double clamp = options.clamp;

  LatticeSlice prev = LatticeSlice::from_entries(0, d, {{Site{0, 0, 0}, 1.0}});
  LatticeSlice nu;
  LatticeSlice rho;
  std::vector<double> expo;
  std::vector<double> weight;
  Box tight{};

  PolymerState state;
  state.step_increments.reserve(static_cast<std::size_t>(n));
  double log_z = 0.0;

  const auto exponent = [&](int j, double e) {
    if (!std::isfinite(e)) throw NumericError("non-finite eta at j=" + std::to_string(j));
    if (clamp != kInf) e = std::clamp(e, -clamp, clamp);
    const double a = beta * e;
    if (!std::isfinite(a)) throw NumericError("beta * eta overflows at j=" + std::to_string(j));
    return a;
  };

  for (int j = 1; j <= n; ++j) {
    Box grid = tight;
    for (int a = 3 - d; a < 2; ++a) {
      grid.lo[a] = std::max(tight.lo[a] - 1, -j);
      grid.hi[a] = std::min(tight.hi[a] + 1, j);
    }
    nu.reset(j, d, grid);
    expo.clear();

    // Pass 1: predictive law (walk kernel applied row by row, in row coordinates)
    // and exponents beta * eta.
    double shift = -kInf;
    double nu_total = 0.0;
    for (int x0 = grid.lo[0]; x0 <= grid.hi[0]; ++x0) {
      const int r0 = j - std::abs(x0);
      for (int x1 = std::max(grid.lo[1], -r0); x1 <= std::min(grid.hi[1], r0); ++x1) {
        const int rem = r0 - std::abs(x1);
        Source src[6];
        int ns = 0;
        const RowSpan* own = prev.find_row(x0, x1);
        if (d >= 3) {
          src[ns++] = {prev.find_row(x0 - 1, x1), 0};
          src[ns++] = {prev.find_row(x0 + 1, x1), 0};
        }
        if (d >= 2) {
          src[ns++] = {prev.find_row(x0, x1 - 1), 0};
          src[ns++] = {prev.find_row(x0, x1 + 1), 0};
        }
        src[ns++] = {own, -1};
        src[ns++] = {own, 1};
        int z_lo = rem + 1, z_hi = -rem - 1;
        for (int s = 0; s < ns; ++s) {
          if (src[s].row == nullptr || src[s].row->count == 0) continue;
          z_lo = std::min(z_lo, src[s].row->z_lo - src[s].dz);
          z_hi = std::max(z_hi, src[s].row->z_hi() - src[s].dz);
        }
        z_lo = std::max(z_lo, -rem);
        z_hi = std::min(z_hi, rem);
        if (z_lo > z_hi) continue;
        const int count = (z_hi - z_lo) / 2 + 1;
        double* out = nu.open_row(x0, x1, z_lo, count);
        for (int s = 0; s < ns; ++s) {
          const RowSpan* r = src[s].row;
          if (r == nullptr || r->count == 0) continue;
          const int first = std::max(z_lo, r->z_lo - src[s].dz);
          const int last = std::min(z_hi, r->z_hi() - src[s].dz);
          if (first > last) continue;
          const double* in = prev.data(*r) + (first + src[s].dz - r->z_lo) / 2;
          double* o = out + (first - z_lo) / 2;
          const int len = (last - first) / 2 + 1;
          for (int t = 0; t < len; ++t) o[t] += in[t];
        }
        const std::size_t base = expo.size();
        expo.resize(base + static_cast<std::size_t>(count));
        double* a = expo.data() + base;
        env.eta_run(j, from_rows(d, Site{x0, x1, z_lo}), d - 1, count, a);
        for (int k = 0; k < count; ++k) {
          const double v = out[k] / kernel_norm;
          out[k] = v;
          if (v > 0) {
            nu_total += v;
            a[k] = exponent(j, a[k]);
            shift = std::max(shift, a[k]);
          } else {
            a[k] = -kInf;
          }
        }
      }
    }
    const std::vector<double>& nu_m = nu.values();
    if (pruning) {
      const std::size_t need = kEvolveArrays * sizeof(double) * std::max(nu_m.size(), prev.values().size());
      if (need > options.memory_budget) throw BudgetError(budget_message(j, d, need, options.memory_budget));
    }

    // Pass 2: unnormalized weights nu * e^{a - shift}.
    weight.assign(nu_m.size(), 0.0);
    double weight_total = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < nu_m.size(); ++i) {
      if (nu_m[i] > 0) {
        const double w = nu_m[i] * std::exp(expo[i] - shift);
        weight[i] = w;
        weight_total += w;
        peak = std::max(peak, w);
      }
    }
    if (!(weight_total > 1e-250)) {
      // Mass sits far from the largest exponent; shift by max(a + ln nu) instead.
      shift = -kInf;
      for (std::size_t i = 0; i < nu_m.size(); ++i)
        if (nu_m[i] > 0) shift = std::max(shift, expo[i] + std::log(nu_m[i]));
      weight_total = 0.0;
      peak = 0.0;
      for (std::size_t i = 0; i < nu_m.size(); ++i) {
        if (nu_m[i] > 0) {
          const double w = std::exp(std::log(nu_m[i]) + expo[i] - shift);
          weight[i] = w;
          weight_total += w;
          peak = std::max(peak, w);
        }
      }
    }
    const double increment = shift + std::log(weight_total) - std::log(nu_total);

    // Pass 3: normalize, prune, and trim rows to their stored support.
    const double floor = options.prune_ratio * peak;
    const auto keep = [&](double w) { return w > 0 && w >= floor; };
    rho.reset(j, d, grid);
    bool any = false;
    double kept_total = 0.0;
    for (int x0 = grid.lo[0]; x0 <= grid.hi[0]; ++x0) {
      for (int x1 = grid.lo[1]; x1 <= grid.hi[1]; ++x1) {
        const RowSpan* r = nu.find_row(x0, x1);
        if (r->count == 0) continue;
        const double* w = weight.data() + r->offset;
        int first = 0, last = r->count - 1;
        while (first <= last && !keep(w[first])) ++first;
        while (last >= first && !keep(w[last])) --last;
        if (first > last) continue;
        double* out = rho.open_row(x0, x1, r->z_lo + 2 * first, last - first + 1);
        for (int k = first; k <= last; ++k) {
          if (keep(w[k])) {
            out[k - first] = w[k];
            kept_total += w[k];
          }
        }
        if (!any) {
          tight.lo = tight.hi = Site{x0, x1, 0};
          any = true;
        }
        tight.lo[0] = std::min(tight.lo[0], x0);
        tight.hi[0] = std::max(tight.hi[0], x0);
        tight.lo[1] = std::min(tight.lo[1], x1);
        tight.hi[1] = std::max(tight.hi[1], x1);
      }
    }
    if (!any) throw NumericError("endpoint law vanished at j=" + std::to_string(j));
    for (double& v : rho.values()) v /= kept_total;

    log_z += increment;
    state.step_increments.push_back(increment);
    if (observer) observer(StepView{j, nu, rho, increment, log_z});
    std::swap(prev, rho);
  }

  state.j = n;
  state.rho = std::move(prev);
  state.nu = std::move(nu);
  state.log_z = log_z;
  return state;
}

PolymerState truncated_evolve(const Environment& env, double beta, int n, int d, double level,
                              const Observer& observer, EvolveOptions options) {
  if (!(level > 0)) throw ConfigError("truncation level L must be > 0");
  options.clamp = level;
  return evolve(env, beta, n, d, observer, options);
}

SiteTransform excess_over(double level) {
  return [level](double eta) { return std::max(std::fabs(eta) - level, 0.0); };
}

PathStats max_path_energy(const Environment& env, int n, int d, const SiteTransform& transform, bool want_path,
                          std::size_t memory_budget) {
  check_shape(n, d);
  std::size_t need = 2 * sizeof(double) * cone_cells(n, d);
  if (want_path)
    for (int j = 1; j <= n; ++j) need += cone_cells(j, d);
  if (need > memory_budget) throw BudgetError(budget_message(n, d, need, memory_budget));

  Box prev_box{};
  std::vector<double> prev(1, 0.0);
  std::vector<double> cur;
  std::vector<Box> boxes;
  std::vector<std::vector<std::uint8_t>> choices;
  if (want_path) {
    boxes.reserve(static_cast<std::size_t>(n));
    choices.reserve(static_cast<std::size_t>(n));
  }

  PathStats stats;
  stats.n = n;
  stats.prefix_max.reserve(static_cast<std::size_t>(n));
  Site best_site{};

  for (int j = 1; j <= n; ++j) {
    const Box box = Box::cone(d, j);
    cur.assign(box.cells(), -kInf);
    std::vector<std::uint8_t> choice;
    if (want_path) choice.assign(box.cells(), 0);
    double best = -kInf;
    for_each_cone_cell(box, j, [&](const Site& x, std::size_t idx) {
      double from = -kInf;
      int arg = 0;
      for (int k = 0; k < 2 * d; ++k) {
        const Site y = neighbor(x, k);
        if (!prev_box.contains(y)) continue;
        const double v = prev[prev_box.index(y)];
        if (v > from) {
          from = v;
          arg = k;
        }
      }
      const double e = env.eta(j, x);
      const double w = transform ? transform(e) : e;
      if (!std::isfinite(w)) throw NumericError("non-finite site weight at j=" + std::to_string(j));
      const double v = from + w;
      cur[idx] = v;
      if (want_path) choice[idx] = static_cast<std::uint8_t>(arg);
      if (v > best) {
        best = v;
        best_site = x;
      }
    });
    stats.prefix_max.push_back(best);
    if (want_path) {
      boxes.push_back(box);
      choices.push_back(std::move(choice));
    }
    std::swap(prev, cur);
    prev_box = box;
  }
  stats.max_energy = stats.prefix_max.back();

  if (want_path) {
    std::vector<Site> path(static_cast<std::size_t>(n));
    Site x = best_site;
    for (int j = n; j >= 1; --j) {
      path[static_cast<std::size_t>(j - 1)] = x;
      const auto& b = boxes[static_cast<std::size_t>(j - 1)];
      x = neighbor(x, choices[static_cast<std::size_t>(j - 1)][b.index(x)]);
    }
    stats.argmax_path = std::move(path);
  }
  return stats;
}

double path_energy(const Environment& env, const std::vector<Site>& path, const SiteTransform& transform) {
  double total = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const double e = env.eta(static_cast<int>(i) + 1, path[i]);
    total += transform ? transform(e) : e;
  }
  return total;
}

int oracle_max_horizon(int d) {
  switch (d) {
    case 1: return 14;
    case 2: return 8;
    case 3: return 6;
    default: return 0;
  }
}

OracleResult brute_force_oracle(const Environment& env, double beta, int n, int d, std::optional<double> clamp,
                                const SiteTransform& transform) {
  if (d < 1 || d > 3) throw ConfigError("dimension d must be 1, 2 or 3");
  if (n < 1 || n > oracle_max_horizon(d))
    throw BudgetError("oracle enumeration budget exceeded: n=" + std::to_string(n) + " for d=" + std::to_string(d) +
                      " (cap " + std::to_string(oracle_max_horizon(d)) + ")");
  const int moves = 2 * d;
  std::size_t paths = 1;
  for (int j = 0; j < n; ++j) paths *= static_cast<std::size_t>(moves);
  const std::size_t stride = static_cast<std::size_t>(n) + 1;

  // Per path: sites omega_1..omega_n and prefix energies beta * H_0..beta * H_n.
  std::vector<Site> sites(paths * static_cast<std::size_t>(n));
  std::vector<double> energy(paths * stride);
  double max_energy = -kInf;
  for (std::size_t p = 0; p < paths; ++p) {
    std::size_t code = p;
    Site x{0, 0, 0};
    double h = 0.0;
    double w_total = 0.0;
    energy[p * stride] = 0.0;
    for (int j = 1; j <= n; ++j) {
      const int k = static_cast<int>(code % static_cast<std::size_t>(moves));
      code /= static_cast<std::size_t>(moves);
      x[k / 2] += (k % 2 == 0) ? -1 : 1;
      sites[p * static_cast<std::size_t>(n) + static_cast<std::size_t>(j - 1)] = x;
      const double e = env.eta(j, x);
      const double ec = clamp ? std::clamp(e, -*clamp, *clamp) : e;
      h += ec;
      w_total += transform ? transform(e) : e;
      energy[p * stride + static_cast<std::size_t>(j)] = beta * h;
    }
    max_energy = std::max(max_energy, w_total);
  }

  OracleResult out;
  out.max_energy = max_energy;

  // Z_n as the plain mean of e^{beta H_n} over equally likely paths.
  {
    double shift = -kInf;
    for (std::size_t p = 0; p < paths; ++p) shift = std::max(shift, energy[p * stride + static_cast<std::size_t>(n)]);
    double sum = 0.0;
    for (std::size_t p = 0; p < paths; ++p) sum += std::exp(energy[p * stride + static_cast<std::size_t>(n)] - shift);
    out.log_z = shift + std::log(sum / static_cast<double>(paths));
  }

  // nu_j(x): weight e^{beta H_{j-1}} of each path, counted at its time-j site.
  out.nu.resize(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) {
    double shift = -kInf;
    for (std::size_t p = 0; p < paths; ++p) shift = std::max(shift, energy[p * stride + static_cast<std::size_t>(j - 1)]);
    double den = 0.0;
    std::map<Site, double> num;
    for (std::size_t p = 0; p < paths; ++p) {
      const double w = std::exp(energy[p * stride + static_cast<std::size_t>(j - 1)] - shift);
      den += w;
      num[sites[p * static_cast<std::size_t>(n) + static_cast<std::size_t>(j - 1)]] += w;
    }
    for (auto& [x, v] : num) v /= den;
    out.nu[static_cast<std::size_t>(j - 1)] = std::move(num);
  }
  return out;
}

}  // namespace polylab::dp
