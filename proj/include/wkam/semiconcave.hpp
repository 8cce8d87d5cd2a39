#pragma once

#include <optional>
#include <random>

#include "wkam/lax_oleinik.hpp"

namespace wkam {

/// Convex representation of D+phi(x): an interval [p_lo, p_hi] in 1D (stored as two
/// vertices), a CCW polygon in 2D. `extremal` holds the reachable-gradient estimates.
template <int D>
struct SuperDiff {
  std::vector<Vec<D>> vertices;
  std::vector<Vec<D>> extremal;
  double slope_tol = 0.0;
  bool ordered = true;  // 1D: one-sided slopes came out in semiconcave order

  double p_lo() const requires(D == 1) { return vertices.front()[0]; }
  double p_hi() const requires(D == 1) { return vertices.back()[0]; }

  double diameter() const {
    double d = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i)
      for (std::size_t j = i + 1; j < vertices.size(); ++j) d = std::max(d, (vertices[i] - vertices[j]).norm());
    return d;
  }
  bool singleton(double tol) const { return diameter() <= tol; }
  Vec<D> centroid() const {
    Vec<D> c = Vec<D>::Zero();
    for (const auto& v : vertices) c += v;
    return c / static_cast<double>(vertices.size());
  }

  /// Closest point of the set to p.
  Vec<D> project(const Vec<D>& p) const {
    if (vertices.empty()) throw EmptySuperdifferential("projection onto an empty superdifferential");
    if constexpr (D == 1) {
      return vec1(std::clamp(p[0], p_lo(), p_hi()));
    } else {
      if (vertices.size() == 1) return vertices[0];
      if (contains_exact(p)) return p;
      Vec<D> best = vertices[0];
      double bd = std::numeric_limits<double>::infinity();
      const std::size_t m = vertices.size();
      for (std::size_t i = 0; i < m; ++i) {
        const Vec<D>& a = vertices[i];
        const Vec<D>& b = vertices[(i + 1) % m];
        const Vec<D> ab = b - a;
        const double len2 = ab.squaredNorm();
        const double s = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const Vec<D> q = a + s * ab;
        if ((q - p).norm() < bd) {
          bd = (q - p).norm();
          best = q;
        }
      }
      return best;
    }
  }
  double distance(const Vec<D>& p) const { return (project(p) - p).norm(); }
  bool contains(const Vec<D>& p, double tol) const { return distance(p) <= tol; }

 private:
  bool contains_exact(const Vec<D>& p) const requires(D == 2) {
    const std::size_t m = vertices.size();
    if (m < 3) return false;
    for (std::size_t i = 0; i < m; ++i) {
      const Vec<D> a = vertices[i], b = vertices[(i + 1) % m];
      const double cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
      if (cross < -1e-14) return false;
    }
    return true;
  }
};

/// Andrew's monotone chain; returns CCW hull without repeated endpoints.
inline std::vector<Vec<2>> convex_hull(std::vector<Vec<2>> pts, double eps = 1e-12) {
  std::sort(pts.begin(), pts.end(), [](const Vec<2>& a, const Vec<2>& b) {
    return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]);
  });
  pts.erase(std::unique(pts.begin(), pts.end(), [&](const Vec<2>& a, const Vec<2>& b) { return (a - b).norm() <= eps; }),
            pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Vec<2>& o, const Vec<2>& a, const Vec<2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<Vec<2>> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= eps) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], pts[i]) <= eps) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

/// Default slope tolerance max(4 h C1, 1e-6), with C1 taken as the 95th percentile of the
/// nodal second differences so that a few convex kinks do not swamp it.
template <int D>
double default_slope_tol(const GridField<D>& phi) {
  return std::max(4.0 * phi.grid().spacing() * phi.semiconcavity_constant(0.95), 1e-6);
}

namespace detail {

/// Distance from x along unit e to the boundary of the interpolation cell that e enters.
template <int D>
double cell_exit_distance(const GridField<D>& phi, const Vec<D>& x, const Vec<D>& e) {
  const double h = phi.grid().spacing();
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < D; ++a) {
    if (std::abs(e[a]) < 1e-14) continue;
    const double u = x[a] / h;
    double gap = e[a] > 0 ? std::floor(u) + 1.0 - u : u - (std::ceil(u) - 1.0);
    if (gap < 1e-9) gap += 1.0;
    best = std::min(best, gap * h / std::abs(e[a]));
  }
  return best;
}

/// One-sided directional slope of the interpolant at x along unit e, Richardson-extrapolated
/// from offsets r/4, r/2, r. When the three quotients disagree with a smooth expansion
/// (a kink inside the probe), the quotient over the part of the first offset that stays in
/// the current interpolation cell is returned instead.
template <int D>
double one_sided_slope(const GridField<D>& phi, const Vec<D>& x, const Vec<D>& e, double r, double slope_tol) {
  const double f0 = phi.value(x);
  const double d1 = 0.25 * r, d2 = 0.5 * r, d4 = r;
  const double q1 = (phi.value(x + d1 * e) - f0) / d1;
  const double q2 = (phi.value(x + d2 * e) - f0) / d2;
  const double q4 = (phi.value(x + d4 * e) - f0) / d4;
  const double s = std::min(d1, cell_exit_distance(phi, x, e));
  const double q0 = s < d1 ? (phi.value(x + s * e) - f0) / s : q1;
  // The extra tests catch kinks where the Richardson combination happens to cancel: close to
  // x (q0 against q1) and around 1.6 offsets away (spread of q2 and q4).
  if (std::abs(3.0 * q2 - q4 - 2.0 * q1) > slope_tol || std::abs(q0 - q1) > slope_tol ||
      std::abs(q4 - q2) > 2.0 * slope_tol)
    return q0;
  return (8.0 * q1 - 6.0 * q2 + q4) / 3.0;
}

template <int D>
Vec<D> snap_to_node(const GridField<D>& phi, const Vec<D>& x) {
  const double h = phi.grid().spacing();
  Vec<D> y = wrap<D>(x, phi.grid().period());
  for (int a = 0; a < D; ++a) {
    const double u = y[a] / h;
    if (std::abs(u - std::round(u)) < 1e-9) y[a] = std::round(u) * h;
  }
  return y;
}

}  // namespace detail

/// Superdifferential of the interpolated field at x.
template <int D>
SuperDiff<D> superdifferential(const GridField<D>& phi, const Vec<D>& x, double probe_radius = 0.0,
                               double slope_tol = 0.0) {
  const double h = phi.grid().spacing();
  if (probe_radius == 0.0) probe_radius = 4.0 * h;
  if (probe_radius < 2.0 * h - 1e-15)
    throw DegenerateRadius("probe radius " + std::to_string(probe_radius) + " is below 2h");
  if (slope_tol <= 0.0) slope_tol = default_slope_tol(phi);
  const Vec<D> xs = detail::snap_to_node(phi, x);
  SuperDiff<D> sd;
  sd.slope_tol = slope_tol;
  if constexpr (D == 1) {
    const double right = detail::one_sided_slope<1>(phi, xs, vec1(1.0), probe_radius, slope_tol);
    const double left = -detail::one_sided_slope<1>(phi, xs, vec1(-1.0), probe_radius, slope_tol);
    // Semiconcavity orders the slopes as right <= left.
    if (right <= left + slope_tol) {
      sd.vertices = {vec1(std::min(right, left)), vec1(std::max(right, left))};
      sd.ordered = true;
    } else {
      // Convex kink: not semiconcave at this resolution, classified as regular.
      const double mid = 0.5 * (right + left);
      sd.vertices = {vec1(mid), vec1(mid)};
      sd.ordered = false;
    }
    sd.extremal = {vec1(right), vec1(left)};
  } else {
    constexpr int kSectors = 16;
    constexpr int kDirs = 3 * kSectors;
    std::array<Vec<2>, kDirs> dirs;
    std::array<double, kDirs> slopes;
    for (int i = 0; i < kDirs; ++i) {
      const double ang = kTwoPi * (i - 1) / kDirs;  // direction 3s+1 is the sector center
      dirs[i] = vec2(std::cos(ang), std::sin(ang));
      slopes[i] = detail::one_sided_slope<2>(phi, xs, dirs[i], probe_radius, slope_tol);
    }
    std::vector<Vec<2>> candidates;
    for (int s = 0; s < kSectors; ++s) {
      Eigen::Matrix<double, 3, 2> A;
      Eigen::Vector3d b;
      for (int k = 0; k < 3; ++k) {
        A.row(k) = dirs[3 * s + k].transpose();
        b[k] = slopes[3 * s + k];
      }
      const Vec<2> g = A.colPivHouseholderQr().solve(b);
      // A sector straddling a kink line averages two gradients; its plane misfits the slopes.
      bool ok = (A * g - b).cwiseAbs().maxCoeff() <= 0.25 * slope_tol;
      // A valid element of D+phi satisfies p.e >= directional derivative in every direction.
      for (int i = 0; i < kDirs && ok; ++i)
        if (g.dot(dirs[i]) < slopes[i] - slope_tol) ok = false;
      if (ok) candidates.push_back(g);
    }
    if (candidates.empty()) {
      Vec<2> g = Vec<2>::Zero();
      for (int i = 0; i < kDirs; ++i) g += slopes[i] * dirs[i];
      candidates.push_back(g * (2.0 / kDirs));
    }
    // Greedy clustering at distance slope_tol.
    std::vector<Vec<2>> reps;
    std::vector<int> counts;
    for (const auto& c : candidates) {
      bool merged = false;
      for (std::size_t r = 0; r < reps.size(); ++r)
        if ((reps[r] / counts[r] - c).norm() < slope_tol) {
          reps[r] += c;
          ++counts[r];
          merged = true;
          break;
        }
      if (!merged) {
        reps.push_back(c);
        counts.push_back(1);
      }
    }
    for (std::size_t r = 0; r < reps.size(); ++r) sd.extremal.push_back(reps[r] / counts[r]);
    sd.vertices = convex_hull(sd.extremal);
    if (sd.vertices.empty()) sd.vertices = sd.extremal;
  }
  return sd;
}

/// Interval or polygon given explicitly (for selection tests and callers with analytic sets).
inline SuperDiff<1> interval_superdiff(double lo, double hi) {
  SuperDiff<1> sd;
  sd.vertices = {vec1(lo), vec1(hi)};
  sd.extremal = sd.vertices;
  return sd;
}
inline SuperDiff<2> polygon_superdiff(std::vector<Vec<2>> pts) {
  SuperDiff<2> sd;
  sd.extremal = pts;
  sd.vertices = convex_hull(std::move(pts));
  return sd;
}

// ---------------------------------------------------------------------------
// Minimal-energy selection.

template <int D>
struct SelectionResult {
  Vec<D> p_sharp = Vec<D>::Zero();
  double h_value = 0.0;
  std::string active_face;  // "interior", "vertex:i", "edge:i", "lower", "upper"
  bool interior = false;
};

template <int D>
SelectionResult<D> minimal_energy_selection(const HamiltonianSpec<D>& H, const SuperDiff<D>& sd, const Vec<D>& x) {
  if (sd.vertices.empty()) throw EmptySuperdifferential("minimal energy selection on an empty set");
  SelectionResult<D> res;
  // Unconstrained minimizer of p -> H(x, p) solves H_p(x, p) = 0.
  const Vec<D> p_free = legendre_to_lagrangian(H, x, Vec<D>(Vec<D>::Zero())).momentum;
  if constexpr (D == 1) {
    const double lo = sd.p_lo(), hi = sd.p_hi();
    if (p_free[0] < lo) {
      res.p_sharp = vec1(lo);
      res.active_face = "lower";
    } else if (p_free[0] > hi) {
      res.p_sharp = vec1(hi);
      res.active_face = "upper";
    } else {
      res.p_sharp = p_free;
      res.active_face = "interior";
      res.interior = true;
    }
  } else {
    const auto& V = sd.vertices;
    if (V.size() >= 3 && sd.distance(p_free) == 0.0) {
      res.p_sharp = p_free;
      res.active_face = "interior";
      res.interior = true;
    } else {
      // Projected gradient from the centroid with backtracking.
      Vec<2> p = sd.centroid();
      double f = H(x, p);
      for (int it = 0; it < 200; ++it) {
        const Vec<2> g = H.grad_p(x, p);
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
          const Vec<2> q = sd.project(p - step * g);
          const double fq = H(x, q);
          if (fq < f - 1e-16) {
            p = q;
            f = fq;
            moved = true;
            break;
          }
          step *= 0.5;
        }
        if (!moved) break;
      }
      res.p_sharp = p;
      res.active_face = "interior";
      res.interior = V.size() >= 3;
      // Refinement: vertices and edge-restricted minima.
      const std::size_t m = V.size();
      for (std::size_t i = 0; i < m; ++i) {
        const double fv = H(x, V[i]);
        if (fv < f - 1e-14) {
          f = fv;
          res.p_sharp = V[i];
        }
        if (m < 2) break;
        const Vec<2> a = V[i], b = V[(i + 1) % m];
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 100; ++it) {  // golden section on the edge
          const double m1 = lo + 0.381966 * (hi - lo), m2 = hi - 0.381966 * (hi - lo);
          if (H(x, a + m1 * (b - a)) < H(x, a + m2 * (b - a))) hi = m2;
          else lo = m1;
        }
        const Vec<2> q = a + 0.5 * (lo + hi) * (b - a);
        const double fq = H(x, q);
        if (fq < f - 1e-14) {
          f = fq;
          res.p_sharp = q;
        }
      }
      // Name the face that carries p#.
      bool named = false;
      for (std::size_t i = 0; i < m && !named; ++i)
        if ((res.p_sharp - V[i]).norm() < 1e-7) {
          res.active_face = "vertex:" + std::to_string(i);
          res.interior = false;
          named = true;
        }
      for (std::size_t i = 0; i < m && !named && m >= 2; ++i) {
        const Vec<2> a = V[i], b = V[(i + 1) % m];
        const Vec<2> ab = b - a;
        const double s = std::clamp((res.p_sharp - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        if ((a + s * ab - res.p_sharp).norm() < 1e-7) {
          res.active_face = "edge:" + std::to_string(i);
          res.interior = false;
          named = true;
        }
      }
    }
  }
  res.h_value = H(x, res.p_sharp);
  return res;
}

/// Convenience: p# at x from the field.
template <int D>
SelectionResult<D> p_sharp_at(const HamiltonianSpec<D>& H, const GridField<D>& phi, const Vec<D>& x,
                              double slope_tol = 0.0) {
  return minimal_energy_selection(H, superdifferential(phi, x, 0.0, slope_tol), x);
}

// ---------------------------------------------------------------------------
// Singular set.

template <int D>
struct SingularMask {
  std::vector<char> singular;
  std::vector<double> jump;  // superdifferential diameter per node
  std::vector<char> closure;
  double jump_tol = 0.0;
  Grid<D> grid;

  std::size_t count() const { return static_cast<std::size_t>(std::count(singular.begin(), singular.end(), 1)); }
  std::vector<std::size_t> nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < singular.size(); ++f)
      if (singular[f]) out.push_back(f);
    return out;
  }
  bool singular_near(const Vec<D>& x) const { return singular[grid.nearest(x)] != 0; }
  bool closure_near(const Vec<D>& x) const { return closure[grid.nearest(x)] != 0; }
};

template <int D>
SingularMask<D> singular_mask(const GridField<D>& phi, double jump_tol = 0.0, double slope_tol = 0.0,
                              int threads = 1) {
  if (slope_tol <= 0.0) slope_tol = default_slope_tol(phi);
  if (jump_tol <= 0.0) jump_tol = 2.5 * slope_tol;
  if (!(jump_tol > 2.0 * slope_tol)) throw InvalidArgument("jump_tol must exceed 2 * slope_tol");
  const Grid<D>& g = phi.grid();
  SingularMask<D> m;
  m.grid = g;
  m.jump_tol = jump_tol;
  m.singular.assign(g.size(), 0);
  m.jump.assign(g.size(), 0.0);
  parallel_for(g.size(), threads, [&](std::size_t f) {
    const auto sd = superdifferential(phi, g.node(f), 0.0, slope_tol);
    m.jump[f] = sd.diameter();
    m.singular[f] = m.jump[f] > jump_tol ? 1 : 0;
  });
  m.closure = m.singular;
  for (std::size_t f = 0; f < g.size(); ++f) {
    if (!m.singular[f]) continue;
    const auto idx = g.unflat(f);
    if constexpr (D == 1) {
      for (int k = -1; k <= 1; ++k) m.closure[g.flat({idx[0] + k})] = 1;
    } else {
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) m.closure[g.flat({idx[0] + a, idx[1] + b})] = 1;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Diagnostics.

struct LscReport {
  std::size_t samples = 0;
  std::size_t violations = 0;
  std::size_t strict_drops = 0;  // liminf strictly above the value (lsc but not continuous)
  double worst_gap = 0.0;        // most negative liminf - value seen
  std::vector<std::array<double, 3>> rows;  // (x0, value, liminf estimate)
};

/// Lower semicontinuity of x -> H(x, p#(x)) probed along grid lines: the liminf along the
/// approach is estimated by the smaller of the values one node away on each axis side.
template <int D>
LscReport h_sharp_lsc_check(const HamiltonianSpec<D>& H, const GridField<D>& phi,
                            const std::vector<std::size_t>& samples, double tol = 0.05) {
  const Grid<D>& g = phi.grid();
  const double slope_tol = default_slope_tol(phi);
  auto energy = [&](const Vec<D>& x) { return p_sharp_at(H, phi, x, slope_tol).h_value; };
  LscReport rep;
  for (std::size_t f : samples) {
    const Vec<D> x = g.node(f);
    const double value = energy(x);
    double liminf = std::numeric_limits<double>::infinity();
    for (int a = 0; a < D; ++a)
      for (int s : {-1, 1}) {
        Vec<D> e = Vec<D>::Zero();
        e[a] = s * g.spacing();
        liminf = std::min(liminf, energy(x + e));
      }
    ++rep.samples;
    const double gap = liminf - value;
    rep.worst_gap = std::min(rep.worst_gap, gap);
    if (gap < -tol) ++rep.violations;
    if (gap > tol) ++rep.strict_drops;
    rep.rows.push_back({x[0], value, liminf});
  }
  return rep;
}

struct ArnaudReport {
  std::size_t samples = 0;
  double max_membership = 0.0;   // graph distance of the arrival state to graph(D+phi)
  double max_gradient_gap = 0.0; // |p' - centre of D+phi(arrival)| (meaningful where phi is C^1)
  std::vector<std::array<double, 4>> rows;  // (x, arrival, membership, gradient gap) for D = 1
};

/// Flows (x, D T+_t phi(x)) forward for time t and measures how far the arrival state lies
/// from graph(D+phi): min over nodes y near the arrival x' of |y - x'| + dist(p', D+phi(y)).
template <int D>
ArnaudReport arnaud_graph_check(const GridField<D>& phi, const LagrangianSpec<D>& L, double t,
                                const std::vector<Vec<D>>& samples, double lambda, double dt = 1e-3) {
  const HamiltonianSpec<D>& H = L.hamiltonian();
  const Grid<D>& g = phi.grid();
  const double h = g.spacing();
  const double slope_tol = default_slope_tol(phi);
  ArnaudReport rep;
  for (const Vec<D>& x : samples) {
    const auto opt = t_plus_point(phi, L, t, x, lambda);
    const auto arrival = hamiltonian_flow(H, {x, opt.momentum}, t, std::min(dt, t / 10.0));
    const Vec<D> xa = wrap<D>(arrival.position, g.period());
    const Vec<D>& pa = arrival.fiber;
    double best = superdifferential(phi, xa, 0.0, slope_tol).distance(pa);
    const double gap = (superdifferential(phi, xa, 0.0, slope_tol).centroid() - pa).norm();
    const int R = 5;
    const std::size_t c = g.nearest(xa);
    const auto ci = g.unflat(c);
    auto visit = [&](const std::array<int, D>& k) {
      std::array<int, D> j{};
      Vec<D> off;
      for (int a = 0; a < D; ++a) {
        j[a] = ci[a] + k[a];
        off[a] = k[a] * h;
      }
      const Vec<D> y = g.node(g.flat(j));
      const double dy = torus_distance<D>(y, xa, g.period());
      if (dy >= best) return;
      best = std::min(best, dy + superdifferential(phi, y, 0.0, slope_tol).distance(pa));
    };
    if constexpr (D == 1) {
      for (int k = -R; k <= R; ++k) visit({k});
    } else {
      for (int a = -R; a <= R; ++a)
        for (int b = -R; b <= R; ++b) visit({a, b});
    }
    ++rep.samples;
    rep.max_membership = std::max(rep.max_membership, best);
    rep.max_gradient_gap = std::max(rep.max_gradient_gap, gap);
    rep.rows.push_back({x[0], xa[0], best, gap});
  }
  return rep;
}

struct C11Report {
  double t = 0.0;
  double constant = 0.0;  // fitted C-hat: max |p - D phi(x)| t / |y - x|
  std::size_t pairs = 0;
};

/// For x with tau(x) >= t and y within lambda t, elements p of D+phi(y) satisfy
/// |p - D phi(x)| <= (C / t) |y - x|; returns the smallest C consistent with the samples.
template <int D>
C11Report c11_diagnostic(const GridField<D>& phi, const CutTimeField<D>& cut, double t, double lambda,
                         std::size_t max_points = 64, std::uint64_t seed = 1) {
  const Grid<D>& g = phi.grid();
  const double slope_tol = default_slope_tol(phi);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> eligible;
  for (std::size_t f = 0; f < g.size(); ++f)
    if (cut.tau[f] >= t) eligible.push_back(f);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  if (eligible.size() > max_points) eligible.resize(max_points);
  C11Report rep;
  rep.t = t;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t f : eligible) {
    const Vec<D> x = g.node(f);
    const Vec<D> dphi = superdifferential(phi, x, 0.0, slope_tol).centroid();
    for (int k = 0; k < 4; ++k) {
      Vec<D> off;
      for (int a = 0; a < D; ++a) off[a] = u(rng);
      if (off.norm() > 1.0) off /= off.norm();
      off *= lambda * t;
      if (off.norm() < 2.0 * g.spacing()) continue;
      const Vec<D> y = x + off;
      for (const auto& p : superdifferential(phi, y, 0.0, slope_tol).vertices) {
        rep.constant = std::max(rep.constant, (p - dphi).norm() * t / off.norm());
        ++rep.pairs;
      }
    }
  }
  return rep;
}

}  // namespace wkam
