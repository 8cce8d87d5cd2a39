#pragma once

#include <map>
#include <mutex>

#include "wkam/semiconcave.hpp"

namespace wkam {

/// Time-sampled curve on the torus with per-sample momenta and diagnostics.
template <int D>
struct CharacteristicPath {
  std::string scheme;  // intrinsic, w_delta, ode_sharp, mollified, backward_classical, minimizing_movement
  double period = kTwoPi;
  std::vector<double> times;
  std::vector<Vec<D>> lifted;
  std::vector<Vec<D>> momenta;
  std::vector<Vec<D>> velocities;  // right differences; the last sample repeats the previous one
  std::vector<double> edi;         // per-window EDI residual per unit time
  std::vector<double> inclusion;   // per-sample inclusion residual
  std::vector<double> cut_time;    // per-sample cut time (filled on demand)

  std::size_t size() const { return times.size(); }
  double duration() const { return times.empty() ? 0.0 : times.back() - times.front(); }
  Vec<D> position(std::size_t i) const { return wrap<D>(lifted[i], period); }

  void push(double t, const Vec<D>& x, const Vec<D>& p) {
    times.push_back(t);
    lifted.push_back(x);
    momenta.push_back(p);
  }

  void finalize_velocities() {
    velocities.assign(size(), Vec<D>::Zero());
    for (std::size_t i = 0; i + 1 < size(); ++i) {
      const double dt = times[i + 1] - times[i];
      velocities[i] = dt > 0 ? Vec<D>((lifted[i + 1] - lifted[i]) / dt) : Vec<D>(Vec<D>::Zero());
    }
    if (size() >= 2) velocities.back() = velocities[size() - 2];
  }

  /// Lifted position at time t (linear between samples, clamped at the ends).
  Vec<D> at(double t) const {
    if (t <= times.front()) return lifted.front();
    if (t >= times.back()) return lifted.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double span = times[i + 1] - times[i];
    const double f = span > 0 ? (t - times[i]) / span : 0.0;
    return (1.0 - f) * lifted[i] + f * lifted[i + 1];
  }

  double max_speed() const {
    double v = 0.0;
    for (const auto& u : velocities) v = std::max(v, u.norm());
    return v;
  }
};

/// sup over the union of both sample grids of the torus distance between two paths.
template <int D>
double path_sup_distance(const CharacteristicPath<D>& a, const CharacteristicPath<D>& b) {
  double d = 0.0;
  const double T = std::min(a.times.back(), b.times.back());
  auto probe = [&](double t) {
    if (t > T) return;
    d = std::max(d, torus_distance<D>(a.at(t), b.at(t), a.period));
  };
  for (double t : a.times) probe(t);
  for (double t : b.times) probe(t);
  return d;
}

/// Least-squares slope of log(err) against log(step).
inline double fitted_order(const std::vector<double>& steps, const std::vector<double>& err) {
  if (steps.size() != err.size()) throw SizeMismatch("steps and errors differ in length");
  if (steps.size() < 2) throw InvalidArgument("an order fit needs at least two steps");
  double mx = 0, my = 0;
  const double n = static_cast<double>(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    mx += std::log(steps[i]) / n;
    my += std::log(std::max(err[i], 1e-300)) / n;
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    num += (std::log(steps[i]) - mx) * (std::log(std::max(err[i], 1e-300)) - my);
    den += (std::log(steps[i]) - mx) * (std::log(steps[i]) - mx);
  }
  return num / den;
}

/// Partition {tau_i} of [0, infinity) with tau_Delta(t) = inf{tau_i : tau_i > t}.
class PartitionScheme {
 public:
  explicit PartitionScheme(std::vector<double> points) : points_(std::move(points)) {
    if (points_.empty()) throw InvalidArgument("partition needs at least one point");
    double prev = 0.0;
    for (double p : points_) {
      if (!(p > prev)) throw InvalidArgument("partition points must be strictly increasing and positive");
      width_ = std::max(width_, p - prev);
      prev = p;
    }
  }
  static PartitionScheme uniform(double width, double horizon) {
    std::vector<double> pts;
    const int k = static_cast<int>(std::ceil(horizon / width - 1e-9)) + 1;
    for (int i = 1; i <= k; ++i) pts.push_back(width * i);
    return PartitionScheme(std::move(pts));
  }
  double width() const { return width_; }
  const std::vector<double>& points() const { return points_; }
  double next_after(double t) const {
    const auto it = std::upper_bound(points_.begin(), points_.end(), t);
    if (it == points_.end()) throw InvalidArgument("time beyond the last partition point");
    return *it;
  }

 private:
  std::vector<double> points_;
  double width_ = 0.0;
};

/// Wrapped Gaussian mollification, kernel truncated at 4 eps and renormalized.
template <int D>
GridField<D> mollify(const GridField<D>& phi, double eps) {
  const Grid<D>& g = phi.grid();
  if (eps <= 0.0) return phi;
  const double h = g.spacing();
  const int R = std::min(g.n() / 2, static_cast<int>(std::ceil(4.0 * eps / h)));
  std::vector<double> w(static_cast<std::size_t>(2 * R + 1));
  double total = 0.0;
  for (int k = -R; k <= R; ++k) {
    w[static_cast<std::size_t>(k + R)] = std::exp(-0.5 * (k * h / eps) * (k * h / eps));
    total += w[static_cast<std::size_t>(k + R)];
  }
  for (double& v : w) v /= total;
  // Separable convolution axis by axis.
  std::vector<double> cur = phi.values();
  for (int a = 0; a < D; ++a) {
    std::vector<double> next(cur.size(), 0.0);
    for (std::size_t f = 0; f < cur.size(); ++f) {
      auto idx = g.unflat(f);
      double s = 0.0;
      for (int k = -R; k <= R; ++k) {
        auto j = idx;
        j[a] += k;
        s += w[static_cast<std::size_t>(k + R)] * cur[g.flat(j)];
      }
      next[f] = s;
    }
    cur.swap(next);
  }
  return GridField<D>(g, std::move(cur));
}

template <int D>
struct BackwardBranch {
  CharacteristicPath<D> path;   // times run backward: sample k sits at -times[k]
  Vec<D> initial_momentum;      // momentum of the first arc at the start point
  double el_residual = 0.0;     // momentum continuity, match with D phi, arc EL residual
};

template <int D>
struct MollifiedResult {
  std::vector<double> eps;
  std::vector<CharacteristicPath<D>> paths;
  std::vector<std::vector<double>> pairwise;  // sup-distances between members
  CharacteristicPath<D> limit;
};

/// Characteristic constructions for a fixed semiconcave field phi and Tonelli L.
template <int D>
class CharacteristicSolver {
 public:
  CharacteristicSolver(GridField<D> phi, LagrangianSpec<D> L, ShortTimeConstants constants, int threads = 1)
      : phi_(std::move(phi)),
        L_(std::move(L)),
        constants_(std::move(constants)),
        slope_tol_(default_slope_tol(phi_)),
        lo_(L_, phi_.grid(), config(constants_, threads)) {}

  static CharacteristicSolver create(const GridField<D>& phi, const LagrangianSpec<D>& L, int threads = 1) {
    return CharacteristicSolver(phi, L, short_time_constants(phi, L), threads);
  }

  const GridField<D>& phi() const { return phi_; }
  const LagrangianSpec<D>& lagrangian() const { return L_; }
  const HamiltonianSpec<D>& hamiltonian() const { return L_.hamiltonian(); }
  const ShortTimeConstants& constants() const { return constants_; }
  double slope_tol() const { return slope_tol_; }
  double lambda() const { return constants_.lambda; }
  double tau_step() const { return constants_.tau_phi_step; }
  const LaxOleinik<D>& lax_oleinik() const { return lo_; }

  SuperDiff<D> superdiff(const Vec<D>& x) const { return superdifferential(phi_, x, 0.0, slope_tol_); }
  SelectionResult<D> selection(const Vec<D>& x) const {
    return minimal_energy_selection(hamiltonian(), superdiff(x), wrap<D>(x, phi_.grid().period()));
  }
  Vec<D> sharp_velocity(const Vec<D>& x) const {
    const auto sel = selection(x);
    return hamiltonian().grad_p(x, sel.p_sharp);
  }

  // -------------------------------------------------------------------------
  // Intrinsic construction.

  PointOptimum<D> intrinsic_step_detail(const Vec<D>& x, double tau) const {
    check_step(tau);
    return t_plus_point(phi_, L_, tau, x, lambda());
  }
  /// argmax_y phi(y) - A_tau(x, y), lifted near x.
  Vec<D> intrinsic_step(const Vec<D>& x, double tau) const { return intrinsic_step_detail(x, tau).y; }

  /// Iterated intrinsic steps; samples between partition points come from the connecting
  /// minimizing arcs.
  CharacteristicPath<D> intrinsic_characteristic(const Vec<D>& x0, double tau, double T) const {
    check_step(tau);
    CharacteristicPath<D> path;
    path.scheme = "intrinsic";
    path.period = phi_.grid().period();
    const int K = static_cast<int>(std::ceil(T / tau - 1e-9));
    Vec<D> z = x0;
    for (int k = 0; k < K; ++k) {
      const auto opt = t_plus_point(phi_, L_, tau, z, lambda());
      const auto& arc = opt.arc.path;
      const Vec<D> shift = z - arc.lifted.front();
      const double ds = arc.times[1] - arc.times[0];
      for (std::size_t j = 0; j + 1 < arc.lifted.size(); ++j) {
        const Vec<D> v = (arc.lifted[j + 1] - arc.lifted[j]) / ds;
        path.push(k * tau + arc.times[j], arc.lifted[j] + shift, L_.grad_v(arc.lifted[j], v));
      }
      z = arc.lifted.back() + shift;
    }
    path.push(K * tau, z, selection(z).p_sharp);
    path.finalize_velocities();
    return path;
  }

  /// Forward minimizing movement z^tau(t) = z_floor(t / tau), sampled at the partition points.
  CharacteristicPath<D> minimizing_movement_forward(const Vec<D>& x0, double tau, double T) const {
    check_step(tau);
    CharacteristicPath<D> path;
    path.scheme = "minimizing_movement";
    path.period = phi_.grid().period();
    const int K = static_cast<int>(std::ceil(T / tau - 1e-9));
    Vec<D> z = x0;
    for (int k = 0; k <= K; ++k) {
      path.push(k * tau, z, selection(z).p_sharp);
      if (k < K) z = intrinsic_step(z, tau);
    }
    path.finalize_velocities();
    return path;
  }

  /// Backward minimizing movements z_{k+1} = argmin_y phi(y) + A_tau(y, z_k). At a singular
  /// start there is one branch per reachable gradient, each seeded by the backward flow.
  std::vector<BackwardBranch<D>> minimizing_movement_backward(const Vec<D>& x0, double tau, double T) const {
    check_step(tau);
    const auto sd = superdiff(x0);
    std::vector<Vec<D>> seeds;
    if (sd.diameter() > 2.5 * slope_tol_) {
      for (const auto& p : sd.extremal) {
        bool dup = false;
        for (const auto& q : seeds) dup = dup || (q - p).norm() < 2.5 * slope_tol_;
        if (!dup) seeds.push_back(p);
      }
    }
    const int K = static_cast<int>(std::ceil(T / tau - 1e-9));
    std::vector<BackwardBranch<D>> out;
    auto run = [&](const std::optional<Vec<D>>& seed) {
      BackwardBranch<D> br;
      br.path.scheme = "backward_classical";
      br.path.period = phi_.grid().period();
      Vec<D> z = x0;
      std::vector<ActionResult<D>> arcs;
      for (int k = 0; k < K; ++k) {
        PointOptimum<D> opt;
        if (k == 0 && seed) {
          const auto back = hamiltonian_flow(hamiltonian(), {z, *seed}, -tau, std::min(1e-3, tau / 10.0));
          opt = local_point_optimum(phi_, L_, tau, z, back.position, -1);
        } else {
          opt = t_minus_point(phi_, L_, tau, z, lambda());
        }
        arcs.push_back(opt.arc);
        // Arc runs y -> z; store it reversed so that the path moves backward in time.
        const auto& arc = opt.arc.path;
        const Vec<D> shift = z - arc.lifted.back();
        const double ds = arc.times[1] - arc.times[0];
        const std::size_t N = arc.lifted.size() - 1;
        for (std::size_t j = N; j >= 1; --j) {
          const Vec<D> v = (arc.lifted[j] - arc.lifted[j - 1]) / ds;
          br.path.push(k * tau + (arc.times[N] - arc.times[j]), arc.lifted[j] + shift, L_.grad_v(arc.lifted[j], v));
        }
        z = arc.lifted.front() + shift;
      }
      br.path.push(K * tau, z, selection(z).p_sharp);
      br.path.finalize_velocities();
      br.initial_momentum = arcs.front().momentum_out;
      // Euler-Lagrange checks along the concatenation.
      double res = 0.0;
      for (const auto& a : arcs) res = std::max(res, a.el_residual);
      for (std::size_t k = 0; k + 1 < arcs.size(); ++k)
        res = std::max(res, (arcs[k].momentum_in - arcs[k + 1].momentum_out).norm());
      for (std::size_t k = 1; k < arcs.size(); ++k) {
        const Vec<D> zk = arcs[k].path.lifted.back();
        res = std::max(res, (arcs[k].momentum_out - superdiff(zk).centroid()).norm());
      }
      br.el_residual = res;
      out.push_back(std::move(br));
    };
    if (seeds.empty()) run(std::nullopt);
    else
      for (const auto& s : seeds) run(s);
    return out;
  }

  // -------------------------------------------------------------------------
  // Strict singular characteristics.

  /// Explicit forward stepping of gamma' = H_p(gamma, p#(gamma)). In 1D, a step across a point
  /// where the velocity reverses is cut at that point (located by bisection) and an extra sample
  /// is inserted there, so the path stops exactly at the switch instead of chattering.
  CharacteristicPath<D> strict_singular_characteristic(const Vec<D>& x0, double T, double dt = 1e-3) const {
    if (!(dt > 0.0 && dt <= 1e-2)) throw InvalidArgument("ode_sharp needs 0 < dt <= 1e-2");
    CharacteristicPath<D> path;
    path.scheme = "ode_sharp";
    path.period = phi_.grid().period();
    Vec<D> x = x0;
    double t = 0.0;
    auto sel = selection(x);
    path.push(t, x, sel.p_sharp);
    while (t < T - 1e-12) {
      const double next_t = std::min(T, (std::floor(t / dt + 1e-9) + 1.0) * dt);
      const double step = next_t - t;
      const Vec<D> v = hamiltonian().grad_p(x, sel.p_sharp);
      Vec<D> xn = x + step * v;
      auto seln = selection(xn);
      if constexpr (D == 1) {
        const double vn = hamiltonian().grad_p(xn, seln.p_sharp)[0];
        if (v[0] != 0.0 && vn * v[0] < 0.0) {
          double a = x[0], b = xn[0];
          for (int it = 0; it < 80; ++it) {
            const double m = 0.5 * (a + b);
            if (sharp_velocity(vec1(m))[0] * v[0] > 0.0) a = m;
            else b = m;
          }
          const double hit = std::abs(b - x[0]) / std::abs(v[0]);
          if (hit < step - 1e-15) {
            x = vec1(b);
            t += hit;
            sel = selection(x);
            path.push(t, x, sel.p_sharp);
            continue;
          }
        }
      }
      x = xn;
      sel = seln;
      t = next_t;
      path.push(t, x, sel.p_sharp);
    }
    path.finalize_velocities();
    return path;
  }

  // -------------------------------------------------------------------------
  // Partition vector field W_Delta(t, x) = H_p(x, D T+_{tau_Delta(t) - t} phi(x)).

  Vec<D> w_delta_field(const PartitionScheme& partition, double t, const Vec<D>& x) const {
    if (partition.width() > tau_step() + 1e-12) throw StepTooLarge("partition width exceeds tau(phi)");
    const double s = partition.next_after(t) - t;
    const auto field = regularized(s);
    return hamiltonian().grad_p(x, field->central_gradient(x));
  }

  CharacteristicPath<D> w_delta_characteristic(const Vec<D>& x0, const PartitionScheme& partition, double T,
                                               double dt) const {
    CharacteristicPath<D> path;
    path.scheme = "w_delta";
    path.period = phi_.grid().period();
    Vec<D> x = x0;
    const int K = static_cast<int>(std::ceil(T / dt - 1e-9));
    for (int k = 0; k <= K; ++k) {
      const double t = std::min(T, k * dt);
      const double s = partition.next_after(t) - t;
      const Vec<D> p = regularized(s)->central_gradient(x);
      path.push(t, x, p);
      if (k < K) x += (std::min(T, (k + 1) * dt) - t) * hamiltonian().grad_p(x, p);
    }
    path.finalize_velocities();
    return path;
  }

  // -------------------------------------------------------------------------
  // Mollified generalized characteristics.

  MollifiedResult<D> mollified_generalized_characteristic(const Vec<D>& x0, double T,
                                                         const std::vector<double>& eps_schedule,
                                                         double dt = 1e-3) const {
    const double h = phi_.grid().spacing();
    for (std::size_t i = 0; i < eps_schedule.size(); ++i) {
      if (eps_schedule[i] < 2.0 * h - 1e-15) throw InvalidArgument("mollification width below 2h");
      if (i > 0 && !(eps_schedule[i] < eps_schedule[i - 1])) throw InvalidArgument("eps schedule must decrease");
    }
    MollifiedResult<D> res;
    res.eps = eps_schedule;
    for (double eps : eps_schedule) {
      const GridField<D> smooth = mollify(phi_, eps);
      CharacteristicPath<D> path;
      path.scheme = "mollified";
      path.period = phi_.grid().period();
      Vec<D> x = x0;
      const int K = static_cast<int>(std::ceil(T / dt - 1e-9));
      for (int k = 0; k <= K; ++k) {
        const Vec<D> p = smooth.central_gradient(x);
        path.push(std::min(T, k * dt), x, p);
        if (k < K) x += dt * hamiltonian().grad_p(x, p);
      }
      path.finalize_velocities();
      res.paths.push_back(std::move(path));
    }
    const std::size_t m = res.paths.size();
    res.pairwise.assign(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        res.pairwise[i][j] = res.pairwise[j][i] = path_sup_distance(res.paths[i], res.paths[j]);
    if (m > 0) res.limit = res.paths.back();
    return res;
  }

 private:
  static LaxOleinikConfig config(const ShortTimeConstants& c, int threads) {
    LaxOleinikConfig cfg;
    cfg.tau_step = c.tau_phi_step > 0 ? c.tau_phi_step : 0.25;
    cfg.lambda = c.lambda;
    cfg.threads = threads;
    return cfg;
  }

  void check_step(double tau) const {
    if (!(tau > 0.0)) throw DegenerateTime("characteristic step must be positive");
    if (tau > tau_step() + 1e-12)
      throw StepTooLarge("step " + std::to_string(tau) + " exceeds tau(phi) = " + std::to_string(tau_step()));
  }

  std::shared_ptr<const GridField<D>> regularized(double s) const {
    const long long key = std::llround(s * 1e12);
    {
      std::lock_guard lock(reg_mutex_);
      if (auto it = reg_cache_.find(key); it != reg_cache_.end()) return it->second;
    }
    auto field = std::make_shared<const GridField<D>>(s <= 1e-14 ? phi_ : lo_.t_plus(phi_, s));
    std::lock_guard lock(reg_mutex_);
    return reg_cache_.emplace(key, field).first->second;
  }

  GridField<D> phi_;
  LagrangianSpec<D> L_;
  ShortTimeConstants constants_;
  double slope_tol_;
  LaxOleinik<D> lo_;
  mutable std::mutex reg_mutex_;
  mutable std::map<long long, std::shared_ptr<const GridField<D>>> reg_cache_;
};

// ---------------------------------------------------------------------------
// Verification.

struct EdiReport {
  std::vector<double> window_residuals;  // |phi diff - integral| / window length
  double max_per_unit_time = 0.0;
  double total = 0.0;  // over the whole path, per unit time
};

/// phi(gamma(t2)) - phi(gamma(t1)) = int (L(gamma, gamma') + H(gamma, p#(gamma))) ds over windows
/// of the given length; the integral uses the midpoint of every path segment.
template <int D>
EdiReport edi_residual(CharacteristicPath<D>& path, const GridField<D>& phi, const HamiltonianSpec<D>& H,
                       double window = 1.0) {
  const LagrangianSpec<D> L(H);
  const double slope_tol = default_slope_tol(phi);
  const std::size_t n = path.size();
  std::vector<double> integrand_time(n, 0.0);  // cumulative integral
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dt = path.times[i + 1] - path.times[i];
    if (dt <= 0) {
      integrand_time[i + 1] = integrand_time[i];
      continue;
    }
    const Vec<D> v = (path.lifted[i + 1] - path.lifted[i]) / dt;
    const Vec<D> mid = 0.5 * (path.lifted[i] + path.lifted[i + 1]);
    const auto sel = minimal_energy_selection(H, superdifferential(phi, mid, 0.0, slope_tol), wrap<D>(mid, phi.grid().period()));
    integrand_time[i + 1] = integrand_time[i] + dt * (L.value(mid, v) + sel.h_value);
  }
  EdiReport rep;
  const double T = path.times.back() - path.times.front();
  const int W = std::max(1, static_cast<int>(std::ceil(T / window - 1e-9)));
  std::size_t start = 0;
  for (int w = 1; w <= W; ++w) {
    const double t_end = std::min(path.times.back(), path.times.front() + w * window);
    std::size_t end = start;
    while (end + 1 < n && path.times[end + 1] <= t_end + 1e-12) ++end;
    if (end == start) continue;
    const double len = path.times[end] - path.times[start];
    const double dphi = phi.value(path.lifted[end]) - phi.value(path.lifted[start]);
    const double r = std::abs(dphi - (integrand_time[end] - integrand_time[start])) / len;
    rep.window_residuals.push_back(r);
    rep.max_per_unit_time = std::max(rep.max_per_unit_time, r);
    start = end;
  }
  const double dphi = phi.value(path.lifted.back()) - phi.value(path.lifted.front());
  rep.total = T > 0 ? std::abs(dphi - integrand_time.back()) / T : 0.0;
  path.edi = rep.window_residuals;
  return rep;
}

/// Distance from the finite-difference velocity to co{H_p(y, p)} over y in B(gamma, delta) and p
/// in the vertex set of D+phi(y) plus boundary samples. delta = 0 uses gamma itself.
template <int D>
std::vector<double> gc_inclusion_residual(CharacteristicPath<D>& path, const GridField<D>& phi,
                                          const HamiltonianSpec<D>& H, double delta = 0.0) {
  const Grid<D>& g = phi.grid();
  const double h = g.spacing();
  const double slope_tol = default_slope_tol(phi);
  if (path.velocities.size() != path.size()) path.finalize_velocities();
  std::vector<double> out(path.size(), 0.0);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Vec<D> x = path.position(i);
    std::vector<Vec<D>> probes{x};
    if (delta > 0.0) {
      const int R = static_cast<int>(std::floor(delta / h));
      const std::size_t c = g.nearest(x);
      const auto ci = g.unflat(c);
      if constexpr (D == 1) {
        for (int k = -R; k <= R; ++k) {
          const Vec<1> y = g.node(g.flat({ci[0] + k}));
          if (torus_distance<1>(y, x, g.period()) <= delta) probes.push_back(y);
        }
      } else {
        for (int a = -R; a <= R; ++a)
          for (int b = -R; b <= R; ++b) {
            const Vec<2> y = g.node(g.flat({ci[0] + a, ci[1] + b}));
            if (torus_distance<2>(y, x, g.period()) <= delta) probes.push_back(y);
          }
      }
    }
    std::vector<Vec<D>> images;
    for (const auto& y : probes) {
      const auto sd = superdifferential(phi, y, 0.0, slope_tol);
      const auto& V = sd.vertices;
      for (const auto& p : V) images.push_back(H.grad_p(y, p));
      // Boundary samples along the edges.
      for (std::size_t k = 0; k < V.size() && V.size() >= 2; ++k) {
        const Vec<D> a = V[k], b = V[(k + 1) % V.size()];
        for (int s = 1; s <= 16 / static_cast<int>(V.size()); ++s) {
          const double f = static_cast<double>(s) / (16 / static_cast<int>(V.size()) + 1);
          images.push_back(H.grad_p(y, a + f * (b - a)));
        }
      }
    }
    const Vec<D>& v = path.velocities[i];
    if constexpr (D == 1) {
      double lo = images[0][0], hi = images[0][0];
      for (const auto& q : images) {
        lo = std::min(lo, q[0]);
        hi = std::max(hi, q[0]);
      }
      out[i] = std::max({0.0, lo - v[0], v[0] - hi});
    } else {
      out[i] = polygon_superdiff(images).distance(v);
    }
  }
  path.inclusion = out;
  return out;
}

struct PropagationReport {
  bool started_in_cut = false;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double first_violation_time = -1.0;
};

/// If gamma(0) is in the cut set, every later sample must be too.
template <int D, typename InCut>
PropagationReport propagation_check(const CharacteristicPath<D>& path, InCut&& in_cut) {
  PropagationReport rep;
  rep.samples = path.size();
  rep.started_in_cut = in_cut(path.position(0));
  if (!rep.started_in_cut) return rep;
  for (std::size_t i = 0; i < path.size(); ++i)
    if (!in_cut(path.position(i))) {
      if (rep.violations == 0) rep.first_violation_time = path.times[i];
      ++rep.violations;
    }
  return rep;
}

/// Membership predicate from a cut-time field: tau at the nearest node <= cut_tol.
template <int D>
auto cut_membership(const CutTimeField<D>& cut, double cut_tol) {
  return [&cut, cut_tol](const Vec<D>& x) { return cut.tau[cut.tau.grid().nearest(x)] <= cut_tol; };
}

struct StabilityReport {
  std::vector<double> eps;
  std::vector<double> eps_distance;  // sup-distance to the unperturbed path
  double h_jitter = 0.0;
  double h_distance = 0.0;
  bool monotone = true;
};

/// Perturbs phi by mollification and H by a parameter jitter and measures how far the strict
/// singular characteristic moves.
template <int D>
StabilityReport stability_experiment(const CharacteristicSolver<D>& base, const Vec<D>& x, double T, double dt,
                                     const std::vector<double>& eps_schedule,
                                     const HamiltonianSpec<D>* perturbed_h = nullptr, double h_jitter = 0.0) {
  StabilityReport rep;
  const auto ref = base.strict_singular_characteristic(x, T, dt);
  for (double eps : eps_schedule) {
    const GridField<D> smooth = mollify(base.phi(), eps);
    const CharacteristicSolver<D> s(smooth, base.lagrangian(), base.constants());
    rep.eps.push_back(eps);
    rep.eps_distance.push_back(path_sup_distance(ref, s.strict_singular_characteristic(x, T, dt)));
  }
  for (std::size_t i = 1; i < rep.eps_distance.size(); ++i)
    if (rep.eps_distance[i] > rep.eps_distance[i - 1] + 2.0 * base.phi().grid().spacing()) rep.monotone = false;
  if (perturbed_h) {
    const CharacteristicSolver<D> s(base.phi(), LagrangianSpec<D>(*perturbed_h), base.constants());
    rep.h_jitter = h_jitter;
    rep.h_distance = path_sup_distance(ref, s.strict_singular_characteristic(x, T, dt));
  }
  return rep;
}

/// Fraction of sampled times where the windowed energy averages approach H(gamma, p#(gamma))
/// as the window shrinks (each smaller window at least as close as the larger, up to tol).
template <int D>
double right_derivative_consistency(const CharacteristicSolver<D>& solver, const CharacteristicPath<D>& path,
                                    const std::vector<double>& deltas, std::size_t samples = 40,
                                    double tol = 1e-3) {
  auto energy = [&](double t) {
    const Vec<D> x = path.at(t);
    return solver.selection(x).h_value;
  };
  std::size_t good = 0, total = 0;
  const double T = path.times.back() - *std::max_element(deltas.begin(), deltas.end());
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = T * (static_cast<double>(s) + 0.5) / static_cast<double>(samples);
    const double target = energy(t);
    double prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (double d : deltas) {
      const int m = 20;
      double avg = 0.0;
      for (int k = 0; k < m; ++k) avg += energy(t + d * (k + 0.5) / m);
      avg /= m;
      const double err = std::abs(avg - target);
      if (err > prev + tol) ok = false;
      prev = err;
    }
    ok = ok && prev <= std::max(tol, 0.5 * std::abs(target) + tol);
    good += ok ? 1 : 0;
    ++total;
  }
  return total ? static_cast<double>(good) / static_cast<double>(total) : 1.0;
}

}  // namespace wkam
