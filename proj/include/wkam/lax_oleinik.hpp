#pragma once

#include <optional>

#include "wkam/action.hpp"

namespace wkam {

struct LaxOleinikConfig {
  double tau_step = 0.25;  // longest single kernel step; longer times are composed
  double lambda = 4.0;     // speed bound: optimizers are searched within lambda * t
  int threads = 1;
  bool refine = true;      // sub-node parabolic refinement of the optimum
  std::filesystem::path cache_dir;
};

/// Grid realization of the inf/sup-convolutions
///   T-_t phi(x) = min_y phi(y) + A_t(y, x),   T+_t phi(x) = max_y phi(y) - A_t(x, y).
template <int D>
class LaxOleinik {
 public:
  LaxOleinik(LagrangianSpec<D> L, Grid<D> grid, LaxOleinikConfig cfg = {})
      : cfg_(std::move(cfg)), cache_(std::move(L), grid, cfg_.threads, cfg_.cache_dir) {
    if (!(cfg_.tau_step > 0.0)) throw InvalidArgument("tau_step must be positive");
    if (!(cfg_.lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  }

  const LagrangianSpec<D>& lagrangian() const { return cache_.lagrangian(); }
  const HamiltonianSpec<D>& hamiltonian() const { return cache_.lagrangian().hamiltonian(); }
  const Grid<D>& grid() const { return cache_.grid(); }
  const LaxOleinikConfig& config() const { return cfg_; }
  double tau_step() const { return cfg_.tau_step; }
  double lambda() const { return cfg_.lambda; }

  int radius_for(double t) const {
    return std::min(max_radius(), static_cast<int>(std::ceil(cfg_.lambda * t / grid().spacing())) + 1);
  }
  int max_radius() const { return grid().n() / 2 - 1; }
  std::shared_ptr<const KernelTable<D>> table(double t, int radius) const { return cache_.get(t, radius); }

  /// Number of equal substeps used for duration t.
  int substeps(double t) const { return std::max(1, static_cast<int>(std::ceil(t / cfg_.tau_step - 1e-9))); }

  GridField<D> t_minus(const GridField<D>& phi, double t) const { return compose(phi, t, -1); }
  GridField<D> t_plus(const GridField<D>& phi, double t) const { return compose(phi, t, +1); }

  /// One kernel application without composition (t should not exceed tau_step).
  GridField<D> t_minus_step(const GridField<D>& phi, double t) const { return apply(phi, t, -1); }
  GridField<D> t_plus_step(const GridField<D>& phi, double t) const { return apply(phi, t, +1); }

 private:
  GridField<D> compose(const GridField<D>& phi, double t, int sign) const {
    if (t < 0.0) throw DegenerateTime("Lax-Oleinik operators need t >= 0");
    if (t == 0.0) return phi;
    const int k = substeps(t);
    GridField<D> u = phi;
    for (int s = 0; s < k; ++s) u = apply(u, t / k, sign);
    return u;
  }

  GridField<D> apply(const GridField<D>& phi, double t, int sign) const {
    if (!(phi.grid() == grid())) throw SizeMismatch("field grid does not match the operator grid");
    if (!(t > 0.0)) throw DegenerateTime("kernel step needs t > 0");
    int radius = radius_for(t);
    for (;;) {
      bool boundary = false;
      auto out = apply_with_radius(phi, t, sign, radius, &boundary);
      if (!boundary || radius >= max_radius()) return out;
      radius = std::min(max_radius(), 2 * radius);
    }
  }

  GridField<D> apply_with_radius(const GridField<D>& phi, double t, int sign, int radius, bool* boundary) const {
    const auto table = cache_.get(t, radius);
    const Grid<D>& g = grid();
    const int R = radius;
    std::vector<double> out(g.size());
    std::vector<char> hit(g.size(), 0);
    const double ambiguity_tol = 1e-12;
    const bool check_ambiguous = sign > 0 && t < cfg_.tau_step;
    std::vector<std::string> ambiguous;
    std::mutex amb_mutex;

    // Kernel term seen from target node i at offset k: A_t(y, x_i) for T-, A_t(x_i, y) for T+.
    auto kernel = [&](const std::array<int, D>& i, const std::array<int, D>& k) {
      if (sign < 0) {
        std::array<int, D> j{}, mk{};
        for (int a = 0; a < D; ++a) {
          j[a] = g.wrap_index(i[a] + k[a]);
          mk[a] = -k[a];
        }
        return (*table)(g.flat(j), mk);
      }
      return (*table)(g.flat(i), k);
    };
    auto objective = [&](const std::array<int, D>& i, const std::array<int, D>& k) {
      std::array<int, D> j{};
      for (int a = 0; a < D; ++a) j[a] = i[a] + k[a];
      const double phij = phi.at(j);
      return sign < 0 ? phij + kernel(i, k) : phij - kernel(i, k);
    };

    parallel_for(g.size(), cfg_.threads, [&](std::size_t f) {
      const auto i = g.unflat(f);
      double best = sign < 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      std::array<int, D> best_k{};
      std::size_t best_node = 0;
      struct Tie {
        double value;
        std::array<int, D> k;
        std::size_t node;
      };
      std::vector<Tie> ties;
      // Wrapped node coordinates of i + k along each axis, k in [-R, R].
      const int W = 2 * R + 1;
      std::array<std::vector<int>, D> wrapped;
      for (int ax = 0; ax < D; ++ax) {
        wrapped[ax].resize(static_cast<std::size_t>(W));
        for (int k = -R; k <= R; ++k) wrapped[ax][static_cast<std::size_t>(k + R)] = g.wrap_index(i[ax] + k);
      }
      const double* pv = phi.values().data();
      auto consider = [&](double v, const std::array<int, D>& k, std::size_t node) {
        const double s = sign < 0 ? -v : v;  // maximize s
        const double sb = sign < 0 ? -best : best;
        if (s > sb + ambiguity_tol) {
          // Drop ties that can no longer be within tolerance of the running optimum.
          std::erase_if(ties, [&](const Tie& tt) { return (sign < 0 ? -tt.value : tt.value) < s - ambiguity_tol; });
          if (sb >= s - 2.0 * ambiguity_tol) ties.push_back({best, best_k, best_node});
          best = v;
          best_k = k;
          best_node = node;
        } else if (s >= sb - ambiguity_tol) {
          ties.push_back({v, k, node});
        }
      };
      const double fsign = sign < 0 ? 1.0 : -1.0;
      if constexpr (D == 1) {
        const double* A = table->raw().data();
        for (int k = -R; k <= R; ++k) {
          const int j = wrapped[0][static_cast<std::size_t>(k + R)];
          // T-: A_t(x_j, x_j - k h);  T+: A_t(x_i, x_i + k h).
          const double a = sign < 0 ? A[static_cast<std::size_t>(j) * W + (R - k)]
                                    : A[static_cast<std::size_t>(i[0]) * W + (k + R)];
          consider(pv[j] + fsign * a, {k}, static_cast<std::size_t>(j));
        }
      } else {
        const int nn = g.n();
        for (int k1 = -R; k1 <= R; ++k1) {
          const int j1 = wrapped[1][static_cast<std::size_t>(k1 + R)];
          for (int k0 = -R; k0 <= R; ++k0) {
            const int j0 = wrapped[0][static_cast<std::size_t>(k0 + R)];
            const std::size_t node = static_cast<std::size_t>(j0) + static_cast<std::size_t>(nn) * j1;
            double a;
            if (table->separable()) {
              const auto& A0 = table->axis_raw(0);
              const auto& A1 = table->axis_raw(1);
              a = sign < 0 ? A0[static_cast<std::size_t>(j0) * W + (R - k0)] + A1[static_cast<std::size_t>(j1) * W + (R - k1)]
                           : A0[static_cast<std::size_t>(i[0]) * W + (k0 + R)] + A1[static_cast<std::size_t>(i[1]) * W + (k1 + R)];
            } else {
              const auto& A = table->raw();
              a = sign < 0 ? A[node * table->offsets() + static_cast<std::size_t>(R - k0) + static_cast<std::size_t>(W) * (R - k1)]
                           : A[f * table->offsets() + static_cast<std::size_t>(k0 + R) + static_cast<std::size_t>(W) * (k1 + R)];
            }
            consider(pv[node] + fsign * a, {k0, k1}, node);
          }
        }
      }
      std::erase_if(ties, [&](const Tie& tt) {
        const double st = sign < 0 ? -tt.value : tt.value;
        const double sb = sign < 0 ? -best : best;
        return std::isinf(st) || st < sb - ambiguity_tol;
      });
      if (!ties.empty()) {
        for (const Tie& tt : ties) {
          int spread = 0;
          for (int a = 0; a < D; ++a) spread = std::max(spread, std::abs(tt.k[a] - best_k[a]));
          if (check_ambiguous && spread > 3) {
            std::lock_guard lock(amb_mutex);
            ambiguous.push_back("node " + std::to_string(f));
          }
          if (tt.node < best_node) {
            best = tt.value;
            best_k = tt.k;
            best_node = tt.node;
          }
        }
      }
      for (int a = 0; a < D; ++a)
        if (std::abs(best_k[a]) == R) hit[f] = 1;

      double value = best;
      if (cfg_.refine) {
        double gain = 0.0;
        for (int a = 0; a < D; ++a) {
          if (std::abs(best_k[a]) + 1 > R) continue;
          auto kp = best_k, km = best_k;
          kp[a] += 1;
          km[a] -= 1;
          const double op = objective(i, kp), om = objective(i, km);
          const double obj_d2 = op - 2.0 * best + om;
          const double ker_d2 = kernel(i, kp) - 2.0 * kernel(i, best_k) + kernel(i, km);
          if (!(ker_d2 > 0.0)) continue;
          const double ratio = sign < 0 ? obj_d2 / ker_d2 : -obj_d2 / ker_d2;
          if (ratio < 0.25 || ratio > 4.0) continue;
          gain += (op - om) * (op - om) / (8.0 * std::abs(obj_d2));
        }
        value = sign < 0 ? best - gain : best + gain;
      }
      out[f] = value;
    });
    if (!ambiguous.empty())
      throw AmbiguousMax("T+ maximizers more than 3h apart tie within 1e-12 at " + ambiguous.front() +
                         " (step bound violated)");
    for (char c : hit)
      if (c) *boundary = true;
    return GridField<D>(grid(), std::move(out));
  }

  LaxOleinikConfig cfg_;
  KernelCache<D> cache_;
};

/// Speed bound lambda_0 + 1 for optimizers of fields with Lipschitz constant `lip`.
template <int D>
double lambda_for(const HamiltonianSpec<D>& H, const Grid<D>& grid, double lip) {
  return speed_bound<D>(H, grid, lip + 1.0) + 1.0;
}

/// Operator set up from the short-time constants of phi.
template <int D>
LaxOleinik<D> lax_oleinik_for(const GridField<D>& phi, const LagrangianSpec<D>& L, int threads = 1,
                              std::filesystem::path cache_dir = {}) {
  const auto c = short_time_constants(phi, L);
  LaxOleinikConfig cfg;
  cfg.tau_step = c.tau_phi_step;
  cfg.lambda = c.lambda;
  cfg.threads = threads;
  cfg.cache_dir = std::move(cache_dir);
  return LaxOleinik<D>(L, phi.grid(), cfg);
}

// ---------------------------------------------------------------------------
// Weak KAM solutions.

template <int D>
struct CriticalSolveResult {
  GridField<D> phi;
  double c_value = 0.0;
  int iterations = 0;
  double residual = 0.0;  // sup |T-_t phi + c t - phi|
  bool converged = false;
  double t_step = 0.0;
  double lambda = 0.0;
};

/// Iterates phi <- T-_t phi - min(T-_t phi) from phi = 0.
template <int D>
CriticalSolveResult<D> weak_kam_solve(const HamiltonianSpec<D>& H, int n, double t_step, double tol = 1e-9,
                                      int max_iter = 5000, int threads = 1, std::filesystem::path cache_dir = {}) {
  if (!(t_step > 0.0 && t_step <= 1.0)) throw InvalidArgument("weak_kam_solve: t_step must lie in (0, 1]");
  if (n < 64) throw InvalidArgument("weak_kam_solve: n must be at least 64");
  const Grid<D> grid(n, H.period());
  // Weak KAM slopes satisfy H(x, D phi) = c; bound |D phi| by the oscillation of H(., 0).
  double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
  for (std::size_t f = 0; f < grid.size(); f += std::max<std::size_t>(1, grid.size() / 4096)) {
    const double v = H(grid.node(f), Vec<D>::Zero());
    hmin = std::min(hmin, v);
    hmax = std::max(hmax, v);
  }
  const double pmax = std::sqrt(2.0 * (hmax - hmin) / std::max(1e-12, H.min_hess_eigenvalue()));
  LaxOleinikConfig cfg;
  cfg.tau_step = t_step;
  cfg.lambda = lambda_for<D>(H, grid, pmax);
  cfg.threads = threads;
  cfg.cache_dir = std::move(cache_dir);
  const LaxOleinik<D> lo(LagrangianSpec<D>(H), grid, cfg);

  CriticalSolveResult<D> res;
  res.t_step = t_step;
  res.lambda = cfg.lambda;
  GridField<D> phi(grid, 0.0);
  GridField<D> next = phi;
  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    next = lo.t_minus_step(phi, t_step);
    next = next.shifted(-next.min());
    const double change = next.sup_distance(phi);
    phi = std::move(next);
    if (change <= tol) {
      res.converged = true;
      break;
    }
  }
  res.iterations = std::min(res.iterations, max_iter);
  const GridField<D> tm = lo.t_minus_step(phi, t_step);
  double mean = 0.0;
  for (std::size_t f = 0; f < grid.size(); ++f) mean += tm[f] - phi[f];
  mean /= static_cast<double>(grid.size());
  res.c_value = -mean / t_step;
  double r = 0.0;
  for (std::size_t f = 0; f < grid.size(); ++f) r = std::max(r, std::abs(tm[f] + res.c_value * t_step - phi[f]));
  res.residual = r;
  res.phi = std::move(phi);
  return res;
}

// ---------------------------------------------------------------------------
// Commutator defect and cut time.

/// (T-_t T+_t phi - T+_t T-_t phi) on the grid.
template <int D>
GridField<D> commutator_defect_field(const LaxOleinik<D>& lo, const GridField<D>& phi, double t) {
  const auto a = lo.t_minus(lo.t_plus(phi, t), t);
  const auto b = lo.t_plus(lo.t_minus(phi, t), t);
  std::vector<double> d(a.size());
  for (std::size_t f = 0; f < d.size(); ++f) d[f] = a[f] - b[f];
  return GridField<D>(phi.grid(), std::move(d));
}

template <int D>
double commutator_defect(const LaxOleinik<D>& lo, const GridField<D>& phi, double t, const Vec<D>& x) {
  return commutator_defect_field(lo, phi, t).value(x);
}

/// Commutator defects at t_j = j * delta, j = 1..M, built from a single kernel step.
template <int D>
class DefectLadder {
 public:
  static DefectLadder build(const LaxOleinik<D>& lo, const GridField<D>& phi, double horizon, double delta) {
    if (!(horizon > 0.0 && delta > 0.0)) throw InvalidArgument("defect ladder needs positive horizon and step");
    DefectLadder ladder;
    const int M = std::max(1, static_cast<int>(std::lround(horizon / delta)));
    ladder.delta_ = horizon / M;
    ladder.horizon_ = horizon;
    const double d = ladder.delta_;
    GridField<D> tm = phi, tp = phi;
    // T-_{jd} T+_{jd} phi is not a prefix of T-_{(j-1)d} T+_{(j-1)d} phi, so each rung
    // applies its own chain of j steps.
    for (int j = 1; j <= M; ++j) {
      tm = lo.t_minus(tm, d);
      tp = lo.t_plus(tp, d);
      GridField<D> a = tp;
      for (int s = 0; s < j; ++s) a = lo.t_minus(a, d);
      GridField<D> b = tm;
      for (int s = 0; s < j; ++s) b = lo.t_plus(b, d);
      std::vector<double> v(a.size());
      for (std::size_t f = 0; f < v.size(); ++f) v[f] = a[f] - b[f];
      ladder.defects_.emplace_back(phi.grid(), std::move(v));
    }
    return ladder;
  }

  double delta() const { return delta_; }
  double horizon() const { return horizon_; }
  int steps() const { return static_cast<int>(defects_.size()); }
  double time(int j) const { return delta_ * j; }
  /// Defect field at t_j, j = 1..steps(); j = 0 is identically zero.
  const GridField<D>& defect(int j) const { return defects_.at(static_cast<std::size_t>(j - 1)); }
  double defect_at(int j, const Vec<D>& x) const { return j == 0 ? 0.0 : defect(j).value(x); }
  double defect_at_node(int j, std::size_t f) const { return j == 0 ? 0.0 : defect(j)[f]; }

 private:
  double delta_ = 0.0;
  double horizon_ = 0.0;
  std::vector<GridField<D>> defects_;
};

/// sup{t <= horizon : defect(t, x) <= tol} at ladder resolution, with linear interpolation
/// inside the crossing rung.
template <int D, typename DefectFn>
double cut_time_from_defects(const DefectLadder<D>& ladder, DefectFn&& defect_at, double defect_tol) {
  const int M = ladder.steps();
  if (defect_at(M) <= defect_tol) return ladder.horizon();
  // First rung whose defect exceeds the tolerance.
  int lo = 0;
  while (lo + 1 < M && defect_at(lo + 1) <= defect_tol) ++lo;
  const int hi = lo + 1;
  const double dl = defect_at(lo), dh = defect_at(hi);
  const double frac = dh > dl ? std::clamp((defect_tol - dl) / (dh - dl), 0.0, 1.0) : 0.0;
  return ladder.time(lo) + frac * ladder.delta();
}

/// Ladder-resolution cut time (linear interpolation inside the crossing rung).
template <int D>
double cut_time(const DefectLadder<D>& ladder, const Vec<D>& x, double defect_tol) {
  return cut_time_from_defects(ladder, [&](int j) { return ladder.defect_at(j, x); }, defect_tol);
}

/// Cut time at x: the ladder brackets the crossing, then `bisect_iters` bisection steps on the
/// continuous time axis evaluate the commutator defect directly. Returns the largest time
/// known to satisfy defect <= defect_tol.
template <int D>
double cut_time(const LaxOleinik<D>& lo, const GridField<D>& phi, const Vec<D>& x, double horizon,
                double defect_tol, const DefectLadder<D>* ladder = nullptr, int bisect_iters = 8) {
  std::optional<DefectLadder<D>> own;
  if (!ladder) {
    own = DefectLadder<D>::build(lo, phi, horizon, 0.05);
    ladder = &*own;
  }
  const int M = ladder->steps();
  if (ladder->defect_at(M, x) <= defect_tol) return ladder->horizon();
  int j = 0;
  while (j < M && ladder->defect_at(j + 1, x) <= defect_tol) ++j;
  double t_lo = ladder->time(j), t_hi = ladder->time(j + 1);
  for (int it = 0; it < bisect_iters; ++it) {
    const double mid = 0.5 * (t_lo + t_hi);
    if (commutator_defect(lo, phi, mid, x) <= defect_tol) t_lo = mid;
    else t_hi = mid;
  }
  return t_lo;
}

template <int D>
struct CutTimeField {
  GridField<D> tau;
  double horizon = 0.0;
  double defect_tol = 0.0;
  std::shared_ptr<const DefectLadder<D>> ladder;  // per-node defect curves

  /// Nodes with tau >= horizon.
  std::vector<std::size_t> aubry_candidates() const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < tau.size(); ++f)
      if (tau[f] >= horizon) out.push_back(f);
    return out;
  }
  /// Membership of E(phi, t) = {tau >= t} at the nearest node.
  bool in_level_set(const Vec<D>& x, double t) const { return tau[tau.grid().nearest(x)] >= t; }
};

template <int D>
CutTimeField<D> cut_time_field(std::shared_ptr<const DefectLadder<D>> ladder, double defect_tol) {
  const Grid<D>& g = ladder->defect(1).grid();
  std::vector<double> tau(g.size());
  for (std::size_t f = 0; f < g.size(); ++f)
    tau[f] = cut_time_from_defects(*ladder, [&](int j) { return ladder->defect_at_node(j, f); }, defect_tol);
  CutTimeField<D> out;
  out.tau = GridField<D>(g, std::move(tau));
  out.horizon = ladder->horizon();
  out.defect_tol = defect_tol;
  out.ladder = std::move(ladder);
  return out;
}

/// Nodes where the state at rest carries energy c (|H(x, 0) - c| small); these lie in the
/// projected Aubry set for reversible mechanical systems. Empty when none qualify.
template <int D>
std::vector<std::size_t> aubry_probes(const HamiltonianSpec<D>& H, const Grid<D>& grid, double c,
                                      double tol = 1e-3) {
  std::vector<std::size_t> out;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_f = 0;
  for (std::size_t f = 0; f < grid.size(); ++f) {
    const double gap = std::abs(H(grid.node(f), Vec<D>::Zero()) - c);
    if (gap <= tol) out.push_back(f);
    if (gap < best) {
      best = gap;
      best_f = f;
    }
  }
  if (out.empty() && best <= 0.05 * std::max(1.0, std::abs(c))) out.push_back(best_f);
  return out;
}

struct DefectCalibration {
  double self_defect = 0.0;
  double defect_tol = 1e-4;
  std::size_t probe_count = 0;
  bool used_fallback = false;  // probes taken from the minimal-defect node
};

/// defect_tol = max(5 * self-defect on Aubry probes, 1e-4).
template <int D>
DefectCalibration calibrate_defect_tol(const DefectLadder<D>& ladder, std::vector<std::size_t> probes) {
  DefectCalibration cal;
  const GridField<D>& last = ladder.defect(ladder.steps());
  if (probes.empty()) {
    cal.used_fallback = true;
    probes.push_back(static_cast<std::size_t>(std::min_element(last.values().begin(), last.values().end()) -
                                              last.values().begin()));
  }
  for (std::size_t f : probes)
    for (int j = 1; j <= ladder.steps(); ++j) cal.self_defect = std::max(cal.self_defect, std::abs(ladder.defect_at_node(j, f)));
  cal.probe_count = probes.size();
  cal.defect_tol = std::max(5.0 * cal.self_defect, 1e-4);
  return cal;
}

// ---------------------------------------------------------------------------
// Pointwise sup/inf-convolutions at arbitrary x with continuous refinement.

template <int D>
struct PointOptimum {
  double value = 0.0;
  Vec<D> y = Vec<D>::Zero();         // optimizer, lifted near x
  Vec<D> momentum = Vec<D>::Zero();  // D T+_t phi(x) or D T- _t phi(x)
  ActionResult<D> arc;               // x -> y for T+, y -> x for T-
  bool converged = false;
};

namespace detail {

/// The cubic surrogate rounds a concave node kink over one cell, which biases optima that sit
/// on or next to the kink by O(h). When such a kink lies within two cells of y, the optimum is
/// re-located on the piecewise-linear interpolant, where the objective is concave per cell.
inline void polish_near_kink(const GridField<1>& phi, const LagrangianSpec<1>& L, double t, const Vec<1>& x,
                             int sign, Vec<1>& y, double& F, ActionResult<1>& arc) {
  const Grid<1>& g = phi.grid();
  const double h = g.spacing();
  const int k = static_cast<int>(std::floor(y[0] / h));
  double jump_tol = 0.0;
  bool kink = false;
  for (int j = k - 1; j <= k + 2 && !kink; ++j) {
    const double d2 = phi[g.flat({j - 1})] - 2.0 * phi[g.flat({j})] + phi[g.flat({j + 1})];
    if (jump_tol == 0.0) jump_tol = 10.0 * h * std::max(phi.semiconcavity_constant(0.95), 1e-3);
    if (-d2 / h > jump_tol) kink = true;
  }
  if (!kink) return;
  auto objective = [&](double yy) {
    const double a = sign > 0 ? minimize_action<1>(L, t, x, vec1(yy)).value : minimize_action<1>(L, t, vec1(yy), x).value;
    return sign > 0 ? phi.value(vec1(yy)) - a : -(phi.value(vec1(yy)) + a);
  };
  double best_y = y[0], best_f = objective(y[0]);
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int j = k - 2; j <= k + 2; ++j) {
    double a = j * h, b = (j + 1) * h;
    double c = b - golden * (b - a), d = a + golden * (b - a);
    double fc = objective(c), fd = objective(d);
    for (int it = 0; it < 48; ++it) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - golden * (b - a);
        fc = objective(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + golden * (b - a);
        fd = objective(d);
      }
    }
    for (double cand : {a, b, j * h, (j + 1) * h}) {
      const double f = objective(cand);
      if (f > best_f + 1e-14) {
        best_f = f;
        best_y = cand;
      }
    }
  }
  // Snap onto the node when the optimum is the kink itself.
  const double u = best_y / h;
  if (std::abs(u - std::round(u)) < 1e-6) best_y = std::round(u) * h;
  y = vec1(best_y);
  F = objective(best_y);
  arc = sign > 0 ? minimize_action<1>(L, t, x, y) : minimize_action<1>(L, t, y, x);
}

/// Newton iteration on  s * (phi_c(y) - sign-adjusted A)  from y0. sign = +1 maximizes
/// phi(y) - A_t(x, y); sign = -1 minimizes phi(y) + A_t(y, x).
template <int D>
PointOptimum<D> refine_point(const GridField<D>& phi, const LagrangianSpec<D>& L, double t, const Vec<D>& x,
                             Vec<D> y, int sign) {
  auto eval = [&](const Vec<D>& yy, ActionResult<D>* arc) {
    ActionResult<D> a = sign > 0 ? minimize_action<D>(L, t, x, yy) : minimize_action<D>(L, t, yy, x);
    const auto [pv, pg] = phi.cubic(yy);
    double F;
    Vec<D> grad;
    if (sign > 0) {
      F = pv - a.value;
      grad = pg - a.momentum_out;  // maximize
    } else {
      F = -(pv + a.value);
      grad = -(pg - a.momentum_in);  // D_y A_t(y, x) = -momentum_in; maximize -G
    }
    if (arc) *arc = std::move(a);
    return std::make_pair(F, grad);
  };
  ActionResult<D> arc;
  auto [F, g] = eval(y, &arc);
  PointOptimum<D> res;
  for (int it = 0; it < 40; ++it) {
    if (g.norm() < 1e-10) {
      res.converged = true;
      break;
    }
    // Curvature: the kernel Hessian from finite differences of the endpoint momentum plus
    // the cubic surrogate's Hessian when that keeps the model concave.
    Mat<D> hk;
    constexpr double kStep = 1e-5;
    for (int j = 0; j < D; ++j) {
      Vec<D> e = Vec<D>::Zero();
      e[j] = kStep;
      const Vec<D> gp = eval(y + e, nullptr).second, gm = eval(y - e, nullptr).second;
      hk.col(j) = (gp - gm) / (2.0 * kStep);
    }
    hk = 0.5 * (hk + hk.transpose());
    Eigen::SelfAdjointEigenSolver<Mat<D>> es(hk);
    Vec<D> step;
    if (es.eigenvalues().maxCoeff() < 0.0) {
      step = -hk.ldlt().solve(g);
    } else {
      step = g / std::max(1.0, std::abs(es.eigenvalues().maxCoeff())) * (t / 4.0);
    }
    double alpha = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls) {
      ActionResult<D> a2;
      const Vec<D> y2 = y + alpha * step;
      auto [F2, g2] = eval(y2, &a2);
      if (F2 >= F - 1e-15) {
        y = y2;
        F = F2;
        g = g2;
        arc = std::move(a2);
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved || (alpha * step).norm() < 1e-13) {
      res.converged = g.norm() < 1e-6;
      break;
    }
  }
  if constexpr (D == 1) polish_near_kink(phi, L, t, x, sign, y, F, arc);
  res.y = y;
  res.value = sign > 0 ? F : -F;
  res.momentum = sign > 0 ? arc.momentum_in : arc.momentum_out;
  res.arc = std::move(arc);
  return res;
}

template <int D>
std::vector<std::pair<double, Vec<D>>> grid_candidates(const GridField<D>& phi, const LagrangianSpec<D>& L,
                                                       double t, const Vec<D>& x, double radius, int sign) {
  const Grid<D>& g = phi.grid();
  const double h = g.spacing();
  const int R = static_cast<int>(std::ceil(radius / h)) + 1;
  std::array<int, D> base{};
  for (int a = 0; a < D; ++a) base[a] = static_cast<int>(std::lround(x[a] / h));
  std::vector<std::pair<double, Vec<D>>> out;
  auto visit = [&](const std::array<int, D>& k) {
    Vec<D> y;
    for (int a = 0; a < D; ++a) y[a] = (base[a] + k[a]) * h;
    if ((y - x).norm() > radius + h) return;
    std::array<int, D> idx{};
    for (int a = 0; a < D; ++a) idx[a] = base[a] + k[a];
    const std::size_t node = g.flat(idx);
    const double pv = phi[node];
    if (sign > 0) out.emplace_back(pv - minimize_action<D>(L, t, x, y).value, y);
    else out.emplace_back(pv + minimize_action<D>(L, t, y, x).value, y);
  };
  if constexpr (D == 1) {
    for (int k = -R; k <= R; ++k) visit({k});
  } else {
    for (int k1 = -R; k1 <= R; ++k1)
      for (int k0 = -R; k0 <= R; ++k0) visit({k0, k1});
  }
  return out;
}

}  // namespace detail

/// sup_y phi(y) - A_t(x, y) at a single (off-grid) point.
template <int D>
PointOptimum<D> t_plus_point(const GridField<D>& phi, const LagrangianSpec<D>& L, double t, const Vec<D>& x,
                             double lambda) {
  const auto cands = detail::grid_candidates(phi, L, t, x, lambda * t, +1);
  auto best = std::max_element(cands.begin(), cands.end(),
                               [](const auto& a, const auto& b) { return a.first < b.first; });
  return detail::refine_point(phi, L, t, x, best->second, +1);
}

/// inf_y phi(y) + A_t(y, x) at a single (off-grid) point.
template <int D>
PointOptimum<D> t_minus_point(const GridField<D>& phi, const LagrangianSpec<D>& L, double t, const Vec<D>& x,
                              double lambda) {
  const auto cands = detail::grid_candidates(phi, L, t, x, lambda * t, -1);
  auto best = std::min_element(cands.begin(), cands.end(),
                               [](const auto& a, const auto& b) { return a.first < b.first; });
  return detail::refine_point(phi, L, t, x, best->second, -1);
}

/// Local optimizer seeded at y0 (used when several branches must be followed).
template <int D>
PointOptimum<D> local_point_optimum(const GridField<D>& phi, const LagrangianSpec<D>& L, double t, const Vec<D>& x,
                                    const Vec<D>& y0, int sign) {
  return detail::refine_point(phi, L, t, x, y0, sign);
}

}  // namespace wkam
