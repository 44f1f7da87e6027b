#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "polylab/common.hpp"

namespace polylab {

/// Inclusive axis-aligned box in Z^d. Trailing unused axes are [0, 0].
struct Box {
  Site lo{0, 0, 0};
  Site hi{0, 0, 0};

  int extent(int axis) const { return hi[axis] - lo[axis] + 1; }
  std::size_t cells() const {
    return static_cast<std::size_t>(extent(0)) * static_cast<std::size_t>(extent(1)) *
           static_cast<std::size_t>(extent(2));
  }
  bool contains(const Site& x) const {
    return x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1] && x[2] >= lo[2] && x[2] <= hi[2];
  }
  std::size_t index(const Site& x) const {
    return (static_cast<std::size_t>(x[0] - lo[0]) * static_cast<std::size_t>(extent(1)) +
            static_cast<std::size_t>(x[1] - lo[1])) *
               static_cast<std::size_t>(extent(2)) +
           static_cast<std::size_t>(x[2] - lo[2]);
  }
  /// Grow by `by` along the first d axes, clipped to the time-j cone |x_i| <= j.
  Box expanded(int d, int by, int j) const {
    Box b = *this;
    for (int a = 0; a < d; ++a) {
      b.lo[a] = std::max(lo[a] - by, -j);
      b.hi[a] = std::min(hi[a] + by, j);
    }
    return b;
  }
  static Box cone(int d, int j) { return Box{}.expanded(d, j, j); }
};

/// Stored cells of one (x0, x1) row: z = z_lo, z_lo + 2, ..., count of them.
struct RowSpan {
  int z_lo = 0;
  int count = 0;
  std::size_t offset = 0;
  int z_hi() const { return z_lo + 2 * (count - 1); }
};

/// Row coordinates: a site of Z^d padded so its last active axis is axis 2
/// (d=1: (0, 0, x0); d=2: (0, x0, x1); d=3 unchanged).
inline Site to_rows(int d, const Site& x) {
  if (d == 1) return Site{0, 0, x[0]};
  if (d == 2) return Site{0, x[0], x[1]};
  return x;
}
inline Site from_rows(int d, const Site& u) {
  if (d == 1) return Site{u[2], 0, 0};
  if (d == 2) return Site{u[1], u[2], 0};
  return u;
}

/// Mass profile on the time-j slice of the space-time lattice.
///
/// Probabilities are kept row by row in row coordinates: rows are indexed by
/// (u0, u1) over a rectangular grid, and each row stores a contiguous run of
/// same-parity cells along u2. Cells outside every run hold 0, and a 0 entry
/// means "not stored" (log value -inf). The row-level accessors take row
/// coordinates; everything else takes sites of Z^d.
class LatticeSlice {
 public:
  LatticeSlice() = default;
  /// Empty slice; rows are the (x0, x1) cells of `grid`.
  LatticeSlice(int j, int d, const Box& grid) { reset(j, d, grid); }

  /// Builds a slice from explicit entries; throws ConfigError on unreachable sites.
  static LatticeSlice from_entries(int j, int d, const std::vector<std::pair<Site, double>>& entries);

  int j() const { return j_; }
  int d() const { return d_; }
  const Box& grid() const { return grid_; }

  double at(const Site& x) const;
  double log_at(const Site& x) const { return std::log(at(x)); }

  /// Visits stored (nonzero) entries in lexicographic site order.
  template <class F>
  void for_each(F&& f) const {
    std::size_t r = 0;
    for (int x0 = grid_.lo[0]; x0 <= grid_.hi[0]; ++x0)
      for (int x1 = grid_.lo[1]; x1 <= grid_.hi[1]; ++x1, ++r) {
        const RowSpan& s = rows_[r];
        for (int k = 0; k < s.count; ++k) {
          const double v = mass_[s.offset + static_cast<std::size_t>(k)];
          if (v != 0.0) f(from_rows(d_, Site{x0, x1, s.z_lo + 2 * k}), v);
        }
      }
  }

  double total() const;
  double max() const;
  std::size_t count() const;
  /// Parity and reachability of every stored entry.
  bool geometry_ok() const;

  /// Row (x0, x1), or nullptr when it lies outside the grid.
  const RowSpan* find_row(int x0, int x1) const {
    if (x0 < grid_.lo[0] || x0 > grid_.hi[0] || x1 < grid_.lo[1] || x1 > grid_.hi[1]) return nullptr;
    return &rows_[row_index(x0, x1)];
  }
  /// Allocates zeroed storage for row (x0, x1). Each row may be opened once.
  double* open_row(int x0, int x1, int z_lo, int count) {
    RowSpan& s = rows_[row_index(x0, x1)];
    s.z_lo = z_lo;
    s.count = count;
    s.offset = mass_.size();
    mass_.resize(mass_.size() + static_cast<std::size_t>(count), 0.0);
    return mass_.data() + s.offset;
  }
  const double* data(const RowSpan& s) const { return mass_.data() + s.offset; }
  const std::vector<double>& values() const { return mass_; }
  std::vector<double>& values() { return mass_; }

  void reset(int j, int d, const Box& grid) {
    j_ = j;
    d_ = d;
    grid_ = grid;
    grid_.lo[2] = grid_.hi[2] = 0;
    rows_.assign(static_cast<std::size_t>(grid_.extent(0)) * static_cast<std::size_t>(grid_.extent(1)), RowSpan{});
    mass_.clear();
  }

 private:
  std::size_t row_index(int x0, int x1) const {
    return static_cast<std::size_t>(x0 - grid_.lo[0]) * static_cast<std::size_t>(grid_.extent(1)) +
           static_cast<std::size_t>(x1 - grid_.lo[1]);
  }

  int j_ = 0;
  int d_ = 1;
  Box grid_{};
  std::vector<RowSpan> rows_{RowSpan{}};
  std::vector<double> mass_;
};

}  // namespace polylab
