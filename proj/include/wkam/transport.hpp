#pragma once

#include <random>

#include "wkam/assignment.hpp"
#include "wkam/singular_flow.hpp"

namespace wkam {

template <int D>
struct ParticleEnsemble {
  std::vector<Vec<D>> points;
  std::vector<double> weights;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
  double total_mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  void validate() const {
    if (points.size() != weights.size()) throw SizeMismatch("ensemble points and weights differ in length");
    if (points.empty()) throw InvalidArgument("empty ensemble");
    for (double w : weights)
      if (!(w > 0.0)) throw InvalidArgument("ensemble weights must be positive");
    if (std::abs(total_mass() - 1.0) > 1e-12) throw InvalidArgument("ensemble weights must sum to 1");
  }

  static ParticleEnsemble dirac(const Vec<D>& x) { return {{x}, {1.0}, 0}; }

  static ParticleEnsemble equal(std::vector<Vec<D>> pts, std::uint64_t seed = 0) {
    ParticleEnsemble e;
    e.weights.assign(pts.size(), 1.0 / static_cast<double>(pts.size()));
    e.points = std::move(pts);
    e.seed = seed;
    return e;
  }

  /// n i.i.d. uniform draws on the torus.
  static ParticleEnsemble uniform(std::size_t n, std::uint64_t seed, double period = kTwoPi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, period);
    std::vector<Vec<D>> pts(n);
    for (auto& p : pts)
      for (int a = 0; a < D; ++a) p[a] = u(rng);
    return equal(std::move(pts), seed);
  }
};

template <int D>
struct TransportRun {
  std::vector<double> times;
  std::vector<ParticleEnsemble<D>> snapshots;
  std::vector<CharacteristicPath<D>> paths;  // one per particle
};

/// Moves every particle along its strict singular characteristic and records the ensemble at
/// the requested times. Weights are carried unchanged.
template <int D>
TransportRun<D> push_forward(const ParticleEnsemble<D>& mu0, const CharacteristicSolver<D>& solver,
                             const std::vector<double>& t_samples, double dt = 1e-3, int threads = 1) {
  mu0.validate();
  if (t_samples.empty() || t_samples.front() != 0.0) throw InvalidArgument("snapshot times must start at 0");
  for (std::size_t i = 1; i < t_samples.size(); ++i)
    if (!(t_samples[i] > t_samples[i - 1])) throw InvalidArgument("snapshot times must increase");
  TransportRun<D> run;
  run.times = t_samples;
  run.paths.resize(mu0.size());
  const double T = t_samples.back();
  parallel_for(mu0.size(), threads, [&](std::size_t i) {
    if (T > 0) {
      run.paths[i] = solver.strict_singular_characteristic(mu0.points[i], T, dt);
    } else {
      run.paths[i].scheme = "ode_sharp";
      run.paths[i].push(0.0, mu0.points[i], Vec<D>::Zero());
    }
  });
  for (double t : t_samples) {
    ParticleEnsemble<D> snap;
    snap.seed = mu0.seed;
    snap.weights = mu0.weights;
    snap.points.reserve(mu0.size());
    for (const auto& p : run.paths) snap.points.push_back(wrap<D>(p.at(t), solver.phi().grid().period()));
    run.snapshots.push_back(std::move(snap));
  }
  return run;
}

/// Smooth test function on the torus: g(x) = prod_a trig_a(k_a x_a), trig in {cos, sin}.
template <int D>
struct FourierMode {
  std::array<int, D> k{};
  std::array<bool, D> sine{};  // false: cos, true: sin
  std::string name;

  double value(const Vec<D>& x) const {
    double v = 1.0;
    for (int a = 0; a < D; ++a) v *= sine[a] ? std::sin(k[a] * x[a]) : std::cos(k[a] * x[a]);
    return v;
  }
  Vec<D> gradient(const Vec<D>& x) const {
    Vec<D> g;
    for (int a = 0; a < D; ++a) {
      double d = sine[a] ? k[a] * std::cos(k[a] * x[a]) : -k[a] * std::sin(k[a] * x[a]);
      for (int b = 0; b < D; ++b)
        if (b != a) d *= sine[b] ? std::sin(k[b] * x[b]) : std::cos(k[b] * x[b]);
      g[a] = d;
    }
    return g;
  }

  /// Constant mode plus cos/sin of modes 1..kmax along each axis separately.
  static std::vector<FourierMode> basis(int kmax) {
    std::vector<FourierMode> out;
    out.push_back({{}, {}, "1"});
    for (int a = 0; a < D; ++a)
      for (int k = 1; k <= kmax; ++k)
        for (bool s : {false, true}) {
          FourierMode m;
          m.k[a] = k;
          m.sine[a] = s;
          m.name = std::string(s ? "sin" : "cos") + "(" + std::to_string(k) + "x" + std::to_string(a) + ")";
          out.push_back(m);
        }
    return out;
  }
};

struct WeakCeReport {
  std::vector<std::string> modes;
  std::vector<std::vector<double>> residuals;  // [mode][interval]
  double max_residual = 0.0;
};

/// Forward difference of int g d mu_t across each snapshot interval against the flux
/// int grad g . H_p(x, p#(x)) d mu, averaged over the two interval endpoints.
template <int D>
WeakCeReport weak_ce_residual(const TransportRun<D>& run, const CharacteristicSolver<D>& solver,
                              const std::vector<FourierMode<D>>& modes) {
  const std::size_t S = run.snapshots.size();
  std::vector<std::vector<Vec<D>>> vel(S);
  for (std::size_t s = 0; s < S; ++s)
    for (const auto& x : run.snapshots[s].points) vel[s].push_back(solver.sharp_velocity(x));
  WeakCeReport rep;
  for (const auto& g : modes) {
    rep.modes.push_back(g.name);
    std::vector<double> row;
    std::vector<double> mass(S, 0.0), flux(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const auto& e = run.snapshots[s];
      for (std::size_t i = 0; i < e.size(); ++i) {
        mass[s] += e.weights[i] * g.value(e.points[i]);
        flux[s] += e.weights[i] * g.gradient(e.points[i]).dot(vel[s][i]);
      }
    }
    for (std::size_t s = 0; s + 1 < S; ++s) {
      const double dt = run.times[s + 1] - run.times[s];
      const double r = std::abs((mass[s + 1] - mass[s]) / dt - 0.5 * (flux[s] + flux[s + 1]));
      row.push_back(r);
      rep.max_residual = std::max(rep.max_residual, r);
    }
    rep.residuals.push_back(std::move(row));
  }
  return rep;
}

struct CutMass {
  double on_cut = 0.0;       // weight with cut time <= cut_tol
  double on_singular = 0.0;  // weight inside the dilated singular closure
};

/// Node-wise membership: cut time at the nearest node and the singular mask dilated by
/// `dilation` nodes along every axis.
template <int D>
class CutMassProbe {
 public:
  CutMassProbe(const CutTimeField<D>& cut, double cut_tol, const SingularMask<D>& mask, int dilation)
      : grid_(cut.tau.grid()), in_cut_(grid_.size()), in_sing_(grid_.size(), 0) {
    for (std::size_t f = 0; f < grid_.size(); ++f) in_cut_[f] = cut.tau[f] <= cut_tol;
    for (std::size_t f = 0; f < grid_.size(); ++f) {
      if (!mask.closure[f]) continue;
      const auto idx = grid_.unflat(f);
      if constexpr (D == 1) {
        for (int k = -dilation; k <= dilation; ++k) in_sing_[grid_.flat({idx[0] + k})] = 1;
      } else {
        for (int a = -dilation; a <= dilation; ++a)
          for (int b = -dilation; b <= dilation; ++b) in_sing_[grid_.flat({idx[0] + a, idx[1] + b})] = 1;
      }
    }
  }
  bool in_cut(const Vec<D>& x) const { return in_cut_[grid_.nearest(x)]; }
  bool in_singular(const Vec<D>& x) const { return in_sing_[grid_.nearest(x)]; }

  CutMass measure(const ParticleEnsemble<D>& mu) const {
    CutMass m;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      if (in_cut(mu.points[i])) m.on_cut += mu.weights[i];
      if (in_singular(mu.points[i])) m.on_singular += mu.weights[i];
    }
    return m;
  }

 private:
  Grid<D> grid_;
  std::vector<char> in_cut_;
  std::vector<char> in_sing_;
};

template <int D>
CutMass mass_on_cut(const ParticleEnsemble<D>& mu, const CutMassProbe<D>& probe) {
  return probe.measure(mu);
}

/// True when both sequences are non-decreasing up to `slack`.
inline bool non_decreasing(const std::vector<double>& v, double slack) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1] - slack) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Path space.

/// Weighted ode_sharp paths resampled onto a common uniform time grid.
template <int D>
struct PathEnsemble {
  double dt = 0.0;
  double period = kTwoPi;
  std::vector<std::vector<Vec<D>>> samples;  // [path][k] lifted position at k * dt
  std::vector<double> weights;

  std::size_t size() const { return samples.size(); }
  std::size_t steps() const { return samples.empty() ? 0 : samples.front().size(); }
  double horizon() const { return dt * static_cast<double>(steps() - 1); }

  void add(const CharacteristicPath<D>& path, double weight, double horizon, double step) {
    if (path.scheme != "ode_sharp" && path.scheme != "mather_lift")
      throw InvalidArgument("path ensembles hold strict singular characteristics");
    if (dt == 0.0) dt = step;
    if (std::abs(dt - step) > 1e-15) throw InvalidArgument("all paths must share the sample step");
    const auto K = static_cast<std::size_t>(std::llround(horizon / step));
    if (!samples.empty() && K + 1 != steps()) throw InvalidArgument("all paths must share the sample grid");
    if (path.times.back() < horizon - 1e-9) throw InvalidArgument("path shorter than the ensemble horizon");
    std::vector<Vec<D>> s(K + 1);
    for (std::size_t k = 0; k <= K; ++k) s[k] = path.at(static_cast<double>(k) * step);
    samples.push_back(std::move(s));
    weights.push_back(weight);
    period = path.period;
  }

  void normalize() {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= total;
  }

  Vec<D> eval(std::size_t i, double t) const {
    const auto k = static_cast<std::size_t>(std::llround(t / dt));
    if (std::abs(k * dt - t) > 1e-9) throw InvalidArgument("evaluation time off the sample grid");
    return wrap<D>(samples.at(i).at(k), period);
  }

  /// P^t: drop the first t / dt samples.
  PathEnsemble shift(double t) const {
    const auto k = static_cast<std::size_t>(std::llround(t / dt));
    if (std::abs(k * dt - t) > 1e-9) throw InvalidArgument("shift must be a multiple of the sample step");
    if (k >= steps()) throw InvalidArgument("shift beyond the sampled horizon");
    PathEnsemble out = *this;
    for (auto& s : out.samples) s.erase(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
  }

  /// d_+(a, b) = sup_t e^{-t} d(a(t), b(t)) on the sample grid.
  double distance(std::size_t a, std::size_t b) const {
    double d = 0.0;
    for (std::size_t k = 0; k < steps(); ++k)
      d = std::max(d, std::exp(-static_cast<double>(k) * dt) * torus_distance<D>(samples[a][k], samples[b][k], period));
    return d;
  }

  /// Greedy eps-net size under d_+.
  std::size_t net_size(double eps) const {
    std::vector<std::size_t> centers;
    for (std::size_t i = 0; i < size(); ++i) {
      bool covered = false;
      for (std::size_t c : centers)
        if (distance(i, c) <= eps) {
          covered = true;
          break;
        }
      if (!covered) centers.push_back(i);
    }
    return centers.size();
  }
};

/// Weighted W1 between two marginals with matching weights: particles are replicated in
/// proportion to the weights at the given resolution, then matched exactly.
template <int D>
double marginal_distance(const std::vector<Vec<D>>& a, const std::vector<Vec<D>>& b,
                         const std::vector<double>& weights, double period, int resolution = 64) {
  bool equal = true;
  for (double w : weights) equal = equal && std::abs(w - weights.front()) < 1e-12;
  if (equal) return wasserstein1<D>(a, b, period);
  std::vector<Vec<D>> ra, rb;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto copies = std::max<long>(1, std::lround(weights[i] * resolution));
    for (long c = 0; c < copies; ++c) {
      ra.push_back(a[i]);
      rb.push_back(b[i]);
    }
  }
  return wasserstein1<D>(ra, rb, period);
}

struct InvariantMeasureReport {
  double shift_defect = 0.0;
  double energy_integral = 0.0;
  double c_gap = 0.0;
  double inv_tol = 0.0;
  bool invariant = false;
  std::vector<std::array<double, 3>> comparisons;  // (t, s, W1)
};

/// Compares the evaluation marginals (V^s)_# (P^t)_# mu and (V^s)_# mu for t in t_set and s in
/// s_set. A finite-marginal proxy for path-space invariance.
template <int D>
InvariantMeasureReport invariant_measure_test(const PathEnsemble<D>& paths, const CharacteristicSolver<D>& solver,
                                              double c_value, const std::vector<double>& t_set,
                                              const std::vector<double>& s_set, double inv_tol = 0.0) {
  InvariantMeasureReport rep;
  rep.inv_tol = inv_tol > 0 ? inv_tol : 2.0 * solver.phi().grid().spacing() + 2.0 * paths.dt;
  for (double t : t_set)
    for (double s : s_set) {
      if (t + s > paths.horizon() + 1e-9) throw InvalidArgument("comparison window exceeds the path horizon");
      std::vector<Vec<D>> a, b;
      for (std::size_t i = 0; i < paths.size(); ++i) {
        a.push_back(paths.eval(i, t + s));
        b.push_back(paths.eval(i, s));
      }
      const double w = marginal_distance<D>(a, b, paths.weights, paths.period);
      rep.comparisons.push_back({t, s, w});
      rep.shift_defect = std::max(rep.shift_defect, w);
    }
  for (std::size_t i = 0; i < paths.size(); ++i)
    rep.energy_integral += paths.weights[i] * solver.selection(paths.eval(i, 0.0)).h_value;
  rep.c_gap = c_value - rep.energy_integral;
  rep.invariant = rep.shift_defect <= rep.inv_tol;
  return rep;
}

/// (1/T) int_0^T H(gamma, p#(gamma)) ds, trapezoid on the path samples.
template <int D>
double birkhoff_average(const CharacteristicPath<D>& path, const CharacteristicSolver<D>& solver, double T) {
  if (!(T > 0.0) || T > path.times.back() + 1e-9) throw InvalidArgument("averaging window outside the path");
  double acc = 0.0;
  double prev_t = 0.0, prev_e = solver.selection(path.at(0.0)).h_value;
  for (std::size_t i = 1; i < path.size() && path.times[i - 1] < T; ++i) {
    const double t = std::min(path.times[i], T);
    const double e = solver.selection(path.at(t)).h_value;
    acc += 0.5 * (e + prev_e) * (t - prev_t);
    prev_t = t;
    prev_e = e;
  }
  return acc / T;
}

template <int D>
struct MatherLift {
  std::vector<Vec<D>> support;
  std::vector<Vec<D>> velocities;  // V(x) = H_p(x, D phi(x))
  std::vector<CharacteristicPath<D>> paths;
  std::vector<double> calibration;  // EDI residual per unit time
  InvariantMeasureReport report;
};

/// Gamma(x)(t) = pi Phi_L^t(x, V(x)) on the candidate support, sampled at dt, then tested for
/// invariance as an equally weighted path ensemble.
template <int D>
MatherLift<D> mather_lift_and_verify(const CharacteristicSolver<D>& solver, double c_value,
                                     const std::vector<Vec<D>>& support, double horizon = 4.0, double dt = 1e-2,
                                     const std::vector<double>& t_set = {0.5, 1.0, 2.0},
                                     const std::vector<double>& s_set = {0.0, 1.0}) {
  MatherLift<D> out;
  out.support = support;
  PathEnsemble<D> ens;
  const auto& H = solver.hamiltonian();
  for (const auto& x : support) {
    const Vec<D> p = solver.superdiff(x).centroid();
    const Vec<D> v = H.grad_p(x, p);
    out.velocities.push_back(v);
    CharacteristicPath<D> path;
    path.scheme = "mather_lift";
    path.period = solver.phi().grid().period();
    PhaseState<D> s{x, v, PhaseRepresentation::kTangent};
    const auto K = static_cast<int>(std::llround(horizon / dt));
    for (int k = 0; k <= K; ++k) {
      path.push(k * dt, s.position, solver.lagrangian().grad_v(s.position, s.fiber));
      if (k < K) s = euler_lagrange_flow(solver.lagrangian(), s, dt, std::min(dt, 1e-3));
    }
    path.finalize_velocities();
    out.calibration.push_back(edi_residual(path, solver.phi(), H, 1.0).max_per_unit_time);
    ens.add(path, 1.0, horizon, dt);
    out.paths.push_back(std::move(path));
  }
  ens.normalize();
  out.report = invariant_measure_test(ens, solver, c_value, t_set, s_set);
  return out;
}

struct ManeCandidate {
  std::string phi_name;
  std::string measure_name;
  InvariantMeasureReport report;
  std::vector<double> support0;  // time-0 marginal support (first coordinate per path)
};

struct ManeScanReport {
  std::vector<ManeCandidate> candidates;
  double max_energy = -std::numeric_limits<double>::infinity();
  std::string argmax;
};

/// Max energy integral over the candidates that pass the invariance test.
inline ManeScanReport mane_sup_scan(std::vector<ManeCandidate> candidates) {
  ManeScanReport rep;
  for (const auto& c : candidates)
    if (c.report.invariant && c.report.energy_integral > rep.max_energy) {
      rep.max_energy = c.report.energy_integral;
      rep.argmax = c.phi_name + "/" + c.measure_name;
    }
  rep.candidates = std::move(candidates);
  return rep;
}

/// Builds an equally weighted ode_sharp ensemble from starting points and tests it.
template <int D>
ManeCandidate path_candidate(const CharacteristicSolver<D>& solver, double c_value, std::string phi_name,
                             std::string measure_name, const std::vector<Vec<D>>& starts, double horizon = 4.0,
                             double dt = 1e-2, const std::vector<double>& t_set = {0.5, 1.0, 2.0},
                             const std::vector<double>& s_set = {0.0, 1.0}) {
  PathEnsemble<D> ens;
  ManeCandidate c;
  c.phi_name = std::move(phi_name);
  c.measure_name = std::move(measure_name);
  for (const auto& x : starts) {
    ens.add(solver.strict_singular_characteristic(x, horizon, dt), 1.0, horizon, dt);
    c.support0.push_back(wrap<D>(x, solver.phi().grid().period())[0]);
  }
  ens.normalize();
  c.report = invariant_measure_test(ens, solver, c_value, t_set, s_set);
  return c;
}

}  // namespace wkam
