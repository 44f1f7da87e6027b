#include "polylab/lattice.hpp"

#include <map>
#include <string>

namespace polylab {

LatticeSlice LatticeSlice::from_entries(int j, int d, const std::vector<std::pair<Site, double>>& entries) {
  if (d < 1 || d > 3) throw ConfigError("slice dimension must be 1, 2 or 3");
  std::map<Site, double> merged;
  for (const auto& [x, v] : entries) {
    for (int a = d; a < 3; ++a)
      if (x[a] != 0) throw ConfigError("site has a nonzero coordinate beyond dimension d");
    if (!reachable(j, x)) throw ConfigError("site is not reachable at time " + std::to_string(j));
    merged[to_rows(d, x)] += v;
  }
  Box grid{};
  bool first = true;
  for (const auto& [x, v] : merged) {
    if (first) {
      grid.lo = grid.hi = x;
      first = false;
    }
    for (int a = 0; a < 2; ++a) {
      grid.lo[a] = std::min(grid.lo[a], x[a]);
      grid.hi[a] = std::max(grid.hi[a], x[a]);
    }
  }
  LatticeSlice s(j, d, grid);
  for (auto it = merged.begin(); it != merged.end();) {
    auto end = it;
    int z_hi = it->first[2];
    while (end != merged.end() && end->first[0] == it->first[0] && end->first[1] == it->first[1]) {
      z_hi = end->first[2];
      ++end;
    }
    const int z_lo = it->first[2];
    double* row = s.open_row(it->first[0], it->first[1], z_lo, (z_hi - z_lo) / 2 + 1);
    for (; it != end; ++it) row[(it->first[2] - z_lo) / 2] = it->second;
  }
  return s;
}

double LatticeSlice::at(const Site& site) const {
  const Site x = to_rows(d_, site);
  const RowSpan* s = find_row(x[0], x[1]);
  if (s == nullptr || s->count == 0 || x[2] < s->z_lo || x[2] > s->z_hi() || ((x[2] - s->z_lo) & 1) != 0) return 0.0;
  return mass_[s->offset + static_cast<std::size_t>((x[2] - s->z_lo) / 2)];
}

double LatticeSlice::total() const {
  double t = 0.0;
  for (double v : mass_) t += v;
  return t;
}

double LatticeSlice::max() const {
  double m = 0.0;
  for (double v : mass_) m = std::max(m, v);
  return m;
}

std::size_t LatticeSlice::count() const {
  return static_cast<std::size_t>(std::count_if(mass_.begin(), mass_.end(), [](double v) { return v != 0.0; }));
}

bool LatticeSlice::geometry_ok() const {
  bool ok = true;
  for_each([&](const Site& x, double v) {
    if (!reachable(j_, x) || !(v > 0.0)) ok = false;
    for (int a = d_; a < 3; ++a)
      if (x[a] != 0) ok = false;
  });
  return ok;
}

}  // namespace polylab
