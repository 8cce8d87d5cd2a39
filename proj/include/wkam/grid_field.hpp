#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "wkam/core.hpp"

namespace wkam {

/// Uniform lattice with n nodes per axis on the torus of the given period.
template <int D>
class Grid {
 public:
  Grid() = default;
  explicit Grid(int n, double period = kTwoPi) : n_(n), period_(period) {
    if (n < 2) throw InvalidArgument("grid needs at least 2 nodes per axis");
  }

  int n() const { return n_; }
  double period() const { return period_; }
  double spacing() const { return period_ / n_; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int i = 0; i < D; ++i) s *= static_cast<std::size_t>(n_);
    return s;
  }

  int wrap_index(int i) const {
    i %= n_;
    return i < 0 ? i + n_ : i;
  }
  /// Flattened index with axis 0 fastest.
  std::size_t flat(const std::array<int, D>& idx) const {
    std::size_t f = 0;
    std::size_t stride = 1;
    for (int a = 0; a < D; ++a) {
      f += static_cast<std::size_t>(wrap_index(idx[a])) * stride;
      stride *= static_cast<std::size_t>(n_);
    }
    return f;
  }
  std::array<int, D> unflat(std::size_t f) const {
    std::array<int, D> idx{};
    for (int a = 0; a < D; ++a) {
      idx[a] = static_cast<int>(f % static_cast<std::size_t>(n_));
      f /= static_cast<std::size_t>(n_);
    }
    return idx;
  }
  Vec<D> node(std::size_t f) const {
    const auto idx = unflat(f);
    Vec<D> x;
    for (int a = 0; a < D; ++a) x[a] = idx[a] * spacing();
    return x;
  }
  /// Index of the nearest node.
  std::size_t nearest(const Vec<D>& x) const {
    std::array<int, D> idx{};
    for (int a = 0; a < D; ++a) idx[a] = wrap_index(static_cast<int>(std::lround(wrap_coordinate(x[a], period_) / spacing())));
    return flat(idx);
  }
  bool operator==(const Grid& o) const { return n_ == o.n_ && period_ == o.period_; }

 private:
  int n_ = 64;
  double period_ = kTwoPi;
};

/// Scalar function sampled on a torus grid, with periodic multilinear interpolation for
/// generic queries and a Catmull-Rom cubic for queries that need a smooth surrogate.
template <int D>
class GridField {
 public:
  GridField() = default;
  GridField(Grid<D> grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw SizeMismatch("grid field payload size does not match grid");
    for (double v : values_)
      if (!std::isfinite(v)) throw InvalidArgument("grid field values must be finite");
  }
  explicit GridField(Grid<D> grid, double constant = 0.0)
      : grid_(grid), values_(grid.size(), constant) {}

  template <typename Fn>
  static GridField from_function(Grid<D> grid, Fn&& fn) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fn(grid.node(i));
    return GridField(grid, std::move(v));
  }

  const Grid<D>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(const std::array<int, D>& idx) const { return values_[grid_.flat(idx)]; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }
  double mean() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s / static_cast<double>(values_.size());
  }
  GridField shifted(double a) const {
    GridField r = *this;
    for (double& v : r.values_) v += a;
    return r;
  }
  GridField scaled(double a) const {
    GridField r = *this;
    for (double& v : r.values_) v *= a;
    return r;
  }
  double sup_distance(const GridField& o) const {
    double m = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) m = std::max(m, std::abs(values_[i] - o.values_[i]));
    return m;
  }

  /// Periodic multilinear interpolation; exact at nodes.
  double value(const Vec<D>& x) const {
    const double h = grid_.spacing();
    std::array<int, D> base{};
    std::array<double, D> frac{};
    for (int a = 0; a < D; ++a) {
      const double u = wrap_coordinate(x[a], grid_.period()) / h;
      double fl = std::floor(u);
      double fr = u - fl;
      // Snap to the node when within rounding of it, so node values are reproduced exactly.
      if (fr > 1.0 - 1e-12) {
        fl += 1.0;
        fr = 0.0;
      } else if (fr < 1e-12) {
        fr = 0.0;
      }
      base[a] = static_cast<int>(fl);
      frac[a] = fr;
    }
    if constexpr (D == 1) {
      const double v0 = at({base[0]});
      if (frac[0] == 0.0) return v0;
      return (1.0 - frac[0]) * v0 + frac[0] * at({base[0] + 1});
    } else {
      const double v00 = at({base[0], base[1]});
      const double v10 = at({base[0] + 1, base[1]});
      const double v01 = at({base[0], base[1] + 1});
      const double v11 = at({base[0] + 1, base[1] + 1});
      const double fx = frac[0], fy = frac[1];
      return (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
    }
  }

  /// Catmull-Rom value and gradient.
  std::pair<double, Vec<D>> cubic(const Vec<D>& x) const {
    const double h = grid_.spacing();
    std::array<int, D> base{};
    std::array<std::array<double, 4>, D> w{}, dw{};
    for (int a = 0; a < D; ++a) {
      const double u = wrap_coordinate(x[a], grid_.period()) / h;
      const double fl = std::floor(u);
      const double t = u - fl;
      base[a] = static_cast<int>(fl);
      const double t2 = t * t, t3 = t2 * t;
      w[a] = {0.5 * (-t + 2 * t2 - t3), 0.5 * (2 - 5 * t2 + 3 * t3), 0.5 * (t + 4 * t2 - 3 * t3),
              0.5 * (-t2 + t3)};
      dw[a] = {0.5 * (-1 + 4 * t - 3 * t2) / h, 0.5 * (-10 * t + 9 * t2) / h, 0.5 * (1 + 8 * t - 9 * t2) / h,
               0.5 * (-2 * t + 3 * t2) / h};
    }
    double v = 0.0;
    Vec<D> g = Vec<D>::Zero();
    if constexpr (D == 1) {
      for (int i = 0; i < 4; ++i) {
        const double f = at({base[0] - 1 + i});
        v += w[0][i] * f;
        g[0] += dw[0][i] * f;
      }
    } else {
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
          const double f = at({base[0] - 1 + i, base[1] - 1 + j});
          v += w[0][i] * w[1][j] * f;
          g[0] += dw[0][i] * w[1][j] * f;
          g[1] += w[0][i] * dw[1][j] * f;
        }
    }
    return {v, g};
  }
  double cubic_value(const Vec<D>& x) const { return cubic(x).first; }
  Vec<D> cubic_gradient(const Vec<D>& x) const { return cubic(x).second; }
  Mat<D> cubic_hessian(const Vec<D>& x, double step = 0.0) const {
    if (step <= 0.0) step = 1e-3 * grid_.spacing();
    Mat<D> m;
    for (int j = 0; j < D; ++j) {
      Vec<D> e = Vec<D>::Zero();
      e[j] = step;
      m.col(j) = (cubic_gradient(x + e) - cubic_gradient(x - e)) / (2.0 * step);
    }
    return 0.5 * (m + m.transpose());
  }

  /// Central-difference gradient at a node.
  Vec<D> central_gradient(std::size_t f) const {
    const auto idx = grid_.unflat(f);
    Vec<D> g;
    for (int a = 0; a < D; ++a) {
      auto ip = idx, im = idx;
      ip[a] += 1;
      im[a] -= 1;
      g[a] = (at(ip) - at(im)) / (2.0 * grid_.spacing());
    }
    return g;
  }
  /// Central-difference gradient at an arbitrary point, stencil width one cell.
  Vec<D> central_gradient(const Vec<D>& x) const {
    const double h = grid_.spacing();
    Vec<D> g;
    for (int a = 0; a < D; ++a) {
      Vec<D> e = Vec<D>::Zero();
      e[a] = h;
      g[a] = (value(x + e) - value(x - e)) / (2.0 * h);
    }
    return g;
  }

  /// Largest absolute forward-difference slope, combined over axes.
  double lipschitz() const {
    double s2 = 0.0;
    for (int a = 0; a < D; ++a) {
      double m = 0.0;
      for (std::size_t f = 0; f < size(); ++f) {
        auto idx = grid_.unflat(f);
        auto ip = idx;
        ip[a] += 1;
        m = std::max(m, std::abs(at(ip) - values_[f]));
      }
      m /= grid_.spacing();
      s2 += m * m;
    }
    return std::sqrt(s2);
  }

  /// Positive second central differences (over axes and the two diagonals in 2D) divided by
  /// the squared step, clamped below by 0. `quantile` = 1 gives the maximum, which is the
  /// semiconcavity constant seen at grid resolution; smaller quantiles ignore isolated convex
  /// kinks.
  double semiconcavity_constant(double quantile = 1.0) const {
    const double h = grid_.spacing();
    std::vector<double> per_node(size(), 0.0);
    for (std::size_t f = 0; f < size(); ++f) {
      const auto idx = grid_.unflat(f);
      double c = 0.0;
      for (int a = 0; a < D; ++a) {
        auto ip = idx, im = idx;
        ip[a] += 1;
        im[a] -= 1;
        c = std::max(c, (at(ip) - 2.0 * values_[f] + at(im)) / (h * h));
      }
      if constexpr (D == 2) {
        for (int s : {1, -1}) {
          const double d2 = at({idx[0] + 1, idx[1] + s}) - 2.0 * values_[f] + at({idx[0] - 1, idx[1] - s});
          c = std::max(c, d2 / (2.0 * h * h));
        }
      }
      per_node[f] = c;
    }
    if (quantile >= 1.0) return *std::max_element(per_node.begin(), per_node.end());
    const auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(per_node.size() - 1)));
    std::nth_element(per_node.begin(), per_node.begin() + static_cast<std::ptrdiff_t>(k), per_node.end());
    return per_node[k];
  }

 private:
  Grid<D> grid_;
  std::vector<double> values_;
};

}  // namespace wkam
