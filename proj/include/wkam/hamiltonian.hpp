#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "wkam/core.hpp"

namespace wkam {

enum class HamiltonianFamily { kMechanical, kQuadratic, kCustom };

inline const char* family_name(HamiltonianFamily f) {
  switch (f) {
    case HamiltonianFamily::kMechanical: return "mechanical";
    case HamiltonianFamily::kQuadratic: return "quadratic";
    case HamiltonianFamily::kCustom: return "custom";
  }
  return "unknown";
}

/// Data of the p-quadratic families  H = 1/2 (p-b)^T G (p-b) + V(x)  with constant G, b.
/// `axis_potential` is filled when V(x) = sum_i V_i(x_i) and G is diagonal; the
/// fundamental solution then splits into one-dimensional factors.
template <int D>
struct QuadraticData {
  Mat<D> metric = Mat<D>::Identity();
  Vec<D> drift = Vec<D>::Zero();
  std::function<double(const Vec<D>&)> potential;
  std::function<Vec<D>(const Vec<D>&)> potential_gradient;
  std::function<Mat<D>(const Vec<D>&)> potential_hessian;

  struct AxisPotential {
    std::function<double(double)> value;
    std::function<double(double)> d1;
    std::function<double(double)> d2;
  };
  std::optional<std::array<AxisPotential, D>> axis_potential;
};

/// A Tonelli Hamiltonian on T*T^D.
template <int D>
class HamiltonianSpec {
 public:
  using Fn = std::function<double(const Vec<D>&, const Vec<D>&)>;
  using VecFn = std::function<Vec<D>(const Vec<D>&, const Vec<D>&)>;
  using MatFn = std::function<Mat<D>(const Vec<D>&, const Vec<D>&)>;

  HamiltonianSpec() = default;

  /// Custom callable Hamiltonian. The Hessian in p is optional (finite differences of
  /// `grad_p` otherwise). The callables must be C^2.
  static HamiltonianSpec custom(std::string name, Fn value, VecFn grad_p, VecFn grad_x,
                                MatFn hess_p = {}, double period = kTwoPi) {
    HamiltonianSpec h;
    h.name_ = std::move(name);
    h.family_ = HamiltonianFamily::kCustom;
    h.value_ = std::move(value);
    h.grad_p_ = std::move(grad_p);
    h.grad_x_ = std::move(grad_x);
    h.hess_p_ = std::move(hess_p);
    h.period_ = period;
    h.validate();
    return h;
  }

  static HamiltonianSpec quadratic(std::string name, QuadraticData<D> q,
                                   HamiltonianFamily family = HamiltonianFamily::kQuadratic,
                                   double period = kTwoPi) {
    HamiltonianSpec h;
    h.name_ = std::move(name);
    h.family_ = family;
    h.period_ = period;
    auto data = std::make_shared<const QuadraticData<D>>(std::move(q));
    h.quadratic_ = data;
    h.value_ = [data](const Vec<D>& x, const Vec<D>& p) {
      const Vec<D> s = p - data->drift;
      return 0.5 * s.dot(data->metric * s) + data->potential(x);
    };
    h.grad_p_ = [data](const Vec<D>&, const Vec<D>& p) -> Vec<D> {
      return data->metric * (p - data->drift);
    };
    h.grad_x_ = [data](const Vec<D>& x, const Vec<D>&) -> Vec<D> {
      return data->potential_gradient(x);
    };
    h.hess_p_ = [data](const Vec<D>&, const Vec<D>&) -> Mat<D> { return data->metric; };
    h.validate();
    return h;
  }

  const std::string& name() const { return name_; }
  HamiltonianFamily family() const { return family_; }
  double period() const { return period_; }
  const std::map<std::string, double>& params() const { return params_; }
  HamiltonianSpec& set_param(const std::string& key, double value) {
    params_[key] = value;
    return *this;
  }
  /// Canonical text descriptor "name{k=v,...}" used for cache keys and file headers.
  std::string descriptor() const {
    std::ostringstream os;
    os.precision(17);
    os << name_ << "{";
    bool first = true;
    for (const auto& [k, v] : params_) {
      os << (first ? "" : ",") << k << "=" << v;
      first = false;
    }
    os << "}";
    return os.str();
  }

  double operator()(const Vec<D>& x, const Vec<D>& p) const { return value_(x, p); }
  double value(const Vec<D>& x, const Vec<D>& p) const { return value_(x, p); }
  Vec<D> grad_p(const Vec<D>& x, const Vec<D>& p) const { return grad_p_(x, p); }
  Vec<D> grad_x(const Vec<D>& x, const Vec<D>& p) const { return grad_x_(x, p); }
  Mat<D> hess_p(const Vec<D>& x, const Vec<D>& p) const {
    if (hess_p_) return hess_p_(x, p);
    constexpr double kStep = 1e-5;
    Mat<D> m;
    for (int j = 0; j < D; ++j) {
      Vec<D> e = Vec<D>::Zero();
      e[j] = kStep;
      m.col(j) = (grad_p_(x, p + e) - grad_p_(x, p - e)) / (2.0 * kStep);
    }
    return 0.5 * (m + m.transpose());
  }

  const QuadraticData<D>* quadratic_data() const { return quadratic_.get(); }
  bool separable() const { return quadratic_ && quadratic_->axis_potential.has_value() && is_diagonal(quadratic_->metric); }

  /// One-dimensional factor of a separable Hamiltonian along `axis`.
  HamiltonianSpec<1> axis_factor(int axis) const;

  /// Lower bound of the smallest eigenvalue of H_pp seen on the probe lattice.
  double min_hess_eigenvalue() const { return min_hess_eig_; }
  /// H(x, R e)/R at R = 10 and R = 100 (minimum over probes); growth signals superlinearity.
  std::pair<double, double> superlinearity() const { return superlinear_; }

 private:
  static bool is_diagonal(const Mat<D>& m) {
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j)
        if (i != j && m(i, j) != 0.0) return false;
    return true;
  }

  void validate() {
    // Probe lattice: positions across the torus, momenta in a box.
    const int nx = D == 1 ? 8 : 4;
    const std::array<double, 5> pvals{-3.0, -1.0, 0.0, 1.5, 3.0};
    double min_eig = std::numeric_limits<double>::infinity();
    auto check = [&](const Vec<D>& x, const Vec<D>& p) {
      Eigen::SelfAdjointEigenSolver<Mat<D>> es(hess_p(x, p));
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    };
    if constexpr (D == 1) {
      for (int i = 0; i < nx; ++i)
        for (double p : pvals) check(vec1(period_ * i / nx), vec1(p));
    } else {
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j)
          for (double p : pvals)
            for (double q : pvals) check(vec2(period_ * i / nx, period_ * j / nx), vec2(p, q));
    }
    min_hess_eig_ = min_eig;
    if (!(min_eig > 0.0)) {
      throw NotTonelli(name_ + ": H_pp is not positive definite on the probe lattice (min eigenvalue " +
                       std::to_string(min_eig) + ")");
    }
    double r10 = std::numeric_limits<double>::infinity();
    double r100 = r10;
    for (int k = 0; k < 8; ++k) {
      Vec<D> e;
      if constexpr (D == 1) {
        e[0] = (k % 2 == 0) ? 1.0 : -1.0;
      } else {
        const double a = kTwoPi * k / 8.0;
        e = vec2(std::cos(a), std::sin(a));
      }
      const Vec<D> x = Vec<D>::Constant(0.37 * period_);
      r10 = std::min(r10, value_(x, 10.0 * e) / 10.0);
      r100 = std::min(r100, value_(x, 100.0 * e) / 100.0);
    }
    superlinear_ = {r10, r100};
  }

  std::string name_ = "unnamed";
  HamiltonianFamily family_ = HamiltonianFamily::kCustom;
  double period_ = kTwoPi;
  std::map<std::string, double> params_;
  Fn value_;
  VecFn grad_p_;
  VecFn grad_x_;
  MatFn hess_p_;
  std::shared_ptr<const QuadraticData<D>> quadratic_;
  double min_hess_eig_ = 0.0;
  std::pair<double, double> superlinear_{0.0, 0.0};

  template <int E>
  friend class HamiltonianSpec;
};

template <int D>
HamiltonianSpec<1> HamiltonianSpec<D>::axis_factor(int axis) const {
  if (!separable()) throw InvalidArgument(name_ + " is not separable");
  const auto& ax = (*quadratic_->axis_potential)[axis];
  QuadraticData<1> q;
  q.metric(0, 0) = quadratic_->metric(axis, axis);
  q.drift[0] = quadratic_->drift[axis];
  q.potential = [f = ax.value](const Vec<1>& x) { return f(x[0]); };
  q.potential_gradient = [f = ax.d1](const Vec<1>& x) { return vec1(f(x[0])); };
  q.potential_hessian = [f = ax.d2](const Vec<1>& x) {
    Mat<1> m;
    m(0, 0) = f(x[0]);
    return m;
  };
  q.axis_potential = std::array<QuadraticData<1>::AxisPotential, 1>{
      QuadraticData<1>::AxisPotential{ax.value, ax.d1, ax.d2}};
  auto h = HamiltonianSpec<1>::quadratic(name_ + "[axis" + std::to_string(axis) + "]", std::move(q),
                                         family_, period_);
  h.params_ = params_;
  return h;
}

// ---------------------------------------------------------------------------
// Built-in families.

/// H = 1/2 |p|^2 - sum_i a_i cos(x_i - s_i). D = 1 with a = 1, s = 0 is the pendulum.
template <int D>
HamiltonianSpec<D> cosine_mechanical(const Vec<D>& amplitude, const Vec<D>& shift,
                                     std::string name = D == 1 ? "pendulum" : "mechanical_cos") {
  QuadraticData<D> q;
  q.potential = [amplitude, shift](const Vec<D>& x) {
    double v = 0.0;
    for (int i = 0; i < D; ++i) v -= amplitude[i] * std::cos(x[i] - shift[i]);
    return v;
  };
  q.potential_gradient = [amplitude, shift](const Vec<D>& x) {
    Vec<D> g;
    for (int i = 0; i < D; ++i) g[i] = amplitude[i] * std::sin(x[i] - shift[i]);
    return g;
  };
  q.potential_hessian = [amplitude, shift](const Vec<D>& x) {
    Mat<D> m = Mat<D>::Zero();
    for (int i = 0; i < D; ++i) m(i, i) = amplitude[i] * std::cos(x[i] - shift[i]);
    return m;
  };
  std::array<typename QuadraticData<D>::AxisPotential, D> axes;
  for (int i = 0; i < D; ++i) {
    const double a = amplitude[i];
    const double s = shift[i];
    axes[i].value = [a, s](double x) { return -a * std::cos(x - s); };
    axes[i].d1 = [a, s](double x) { return a * std::sin(x - s); };
    axes[i].d2 = [a, s](double x) { return a * std::cos(x - s); };
  }
  q.axis_potential = axes;
  auto h = HamiltonianSpec<D>::quadratic(std::move(name), std::move(q), HamiltonianFamily::kMechanical);
  for (int i = 0; i < D; ++i) {
    const std::string suffix = D == 1 ? "" : std::to_string(i);
    h.set_param("amplitude" + suffix, amplitude[i]);
    h.set_param("shift" + suffix, shift[i]);
  }
  return h;
}

inline HamiltonianSpec<1> pendulum(double amplitude = 1.0, double shift = 0.0) {
  return cosine_mechanical<1>(vec1(amplitude), vec1(shift), "pendulum");
}

/// H = 1/2 |p|^2.
template <int D>
HamiltonianSpec<D> free_particle() {
  return cosine_mechanical<D>(Vec<D>::Zero(), Vec<D>::Zero(), "free");
}

/// H = 1/2 |p - p0|^2.
template <int D>
HamiltonianSpec<D> shifted_quadratic(const Vec<D>& p0) {
  QuadraticData<D> q;
  q.drift = p0;
  q.potential = [](const Vec<D>&) { return 0.0; };
  q.potential_gradient = [](const Vec<D>&) { return Vec<D>::Zero(); };
  q.potential_hessian = [](const Vec<D>&) { return Mat<D>::Zero(); };
  std::array<typename QuadraticData<D>::AxisPotential, D> axes;
  for (int i = 0; i < D; ++i) {
    axes[i].value = [](double) { return 0.0; };
    axes[i].d1 = [](double) { return 0.0; };
    axes[i].d2 = [](double) { return 0.0; };
  }
  q.axis_potential = axes;
  auto h = HamiltonianSpec<D>::quadratic("shifted_quadratic", std::move(q));
  for (int i = 0; i < D; ++i) h.set_param("p0_" + std::to_string(i), p0[i]);
  return h;
}

/// H = 1/2 |p|^2 + (beta/4) |p|^4 - a cos(x), a non-quadratic custom Tonelli example.
template <int D>
HamiltonianSpec<D> quartic_mechanical(double beta, double amplitude) {
  auto value = [beta, amplitude](const Vec<D>& x, const Vec<D>& p) {
    const double s = p.squaredNorm();
    double v = 0.5 * s + 0.25 * beta * s * s;
    for (int i = 0; i < D; ++i) v -= amplitude * std::cos(x[i]);
    return v;
  };
  auto grad_p = [beta](const Vec<D>&, const Vec<D>& p) -> Vec<D> {
    return (1.0 + beta * p.squaredNorm()) * p;
  };
  auto grad_x = [amplitude](const Vec<D>& x, const Vec<D>&) -> Vec<D> {
    Vec<D> g;
    for (int i = 0; i < D; ++i) g[i] = amplitude * std::sin(x[i]);
    return g;
  };
  auto hess_p = [beta](const Vec<D>&, const Vec<D>& p) -> Mat<D> {
    return (1.0 + beta * p.squaredNorm()) * Mat<D>::Identity() + 2.0 * beta * p * p.transpose();
  };
  auto h = HamiltonianSpec<D>::custom("quartic", value, grad_p, grad_x, hess_p);
  h.set_param("beta", beta).set_param("amplitude", amplitude);
  return h;
}

// ---------------------------------------------------------------------------
// Legendre transform.

template <int D>
struct LegendreResult {
  Vec<D> momentum;
  double lagrangian = 0.0;
  int iterations = 0;
};

/// Solves H_p(x, p) = v by damped Newton from p = v and returns (p, <p,v> - H(x,p)).
template <int D>
LegendreResult<D> legendre_to_lagrangian(const HamiltonianSpec<D>& H, const Vec<D>& x, const Vec<D>& v) {
  constexpr int kMaxIter = 100;
  constexpr double kTol = 1e-10;
  Vec<D> p = v;
  Vec<D> r = H.grad_p(x, p) - v;
  int it = 0;
  // Converge well below the reporting tolerance before stopping.
  while (r.norm() > 1e-13 * std::max(1.0, v.norm()) && it < kMaxIter) {
    const Vec<D> step = H.hess_p(x, p).ldlt().solve(-r);
    double alpha = 1.0;
    Vec<D> trial = p + step;
    Vec<D> rt = H.grad_p(x, trial) - v;
    while (rt.norm() > r.norm() && alpha > 1e-8) {
      alpha *= 0.5;
      trial = p + alpha * step;
      rt = H.grad_p(x, trial) - v;
    }
    if (rt.norm() >= r.norm()) break;
    p = trial;
    r = rt;
    ++it;
  }
  if (r.norm() > kTol * std::max(1.0, v.norm())) {
    throw NonConvergence("Legendre transform residual " + std::to_string(r.norm()) + " after " +
                         std::to_string(it) + " iterations");
  }
  return {p, p.dot(v) - H.value(x, p), it};
}

/// The Lagrangian dual to a Hamiltonian. Quadratic families use the closed form
/// L = 1/2 v^T G^{-1} v + b.v - V(x); custom Hamiltonians go through Newton.
template <int D>
class LagrangianSpec {
 public:
  LagrangianSpec() = default;
  explicit LagrangianSpec(HamiltonianSpec<D> H) : H_(std::move(H)) {
    if (const auto* q = H_.quadratic_data()) inv_metric_ = q->metric.inverse();
  }

  const HamiltonianSpec<D>& hamiltonian() const { return H_; }
  bool closed_form() const { return H_.quadratic_data() != nullptr; }

  double value(const Vec<D>& x, const Vec<D>& v) const {
    if (const auto* q = H_.quadratic_data())
      return 0.5 * v.dot(inv_metric_ * v) + q->drift.dot(v) - q->potential(x);
    return legendre_to_lagrangian(H_, x, v).lagrangian;
  }
  /// L_v, which is the momentum p with H_p(x, p) = v.
  Vec<D> grad_v(const Vec<D>& x, const Vec<D>& v) const {
    if (const auto* q = H_.quadratic_data()) return inv_metric_ * v + q->drift;
    return legendre_to_lagrangian(H_, x, v).momentum;
  }
  Vec<D> grad_x(const Vec<D>& x, const Vec<D>& v) const {
    if (const auto* q = H_.quadratic_data()) return -q->potential_gradient(x);
    const auto leg = legendre_to_lagrangian(H_, x, v);
    return -H_.grad_x(x, leg.momentum);
  }

  struct Derivatives {
    double value;
    Vec<D> lx, lv;
    Mat<D> lxx, lxv, lvv;  // lxv(i, j) = d^2 L / dx_i dv_j
  };

  /// Value, gradient and Hessian blocks at (x, v).
  Derivatives derivatives(const Vec<D>& x, const Vec<D>& v) const {
    Derivatives d;
    if (const auto* q = H_.quadratic_data()) {
      d.value = 0.5 * v.dot(inv_metric_ * v) + q->drift.dot(v) - q->potential(x);
      d.lv = inv_metric_ * v + q->drift;
      d.lx = -q->potential_gradient(x);
      d.lvv = inv_metric_;
      d.lxv = Mat<D>::Zero();
      d.lxx = -q->potential_hessian(x);
      return d;
    }
    const auto leg = legendre_to_lagrangian(H_, x, v);
    d.value = leg.lagrangian;
    d.lv = leg.momentum;
    d.lx = -H_.grad_x(x, leg.momentum);
    d.lvv = H_.hess_p(x, leg.momentum).inverse();
    constexpr double kStep = 1e-5;
    for (int j = 0; j < D; ++j) {
      Vec<D> e = Vec<D>::Zero();
      e[j] = kStep;
      // Column j of d(L_x)/dx_j and d(L_v)/dx_j.
      d.lxx.col(j) = (grad_x(x + e, v) - grad_x(x - e, v)) / (2.0 * kStep);
      d.lxv.row(j) = ((grad_v(x + e, v) - grad_v(x - e, v)) / (2.0 * kStep)).transpose();
    }
    d.lxx = 0.5 * (d.lxx + d.lxx.transpose());
    return d;
  }

 private:
  HamiltonianSpec<D> H_;
  Mat<D> inv_metric_ = Mat<D>::Identity();
};

// ---------------------------------------------------------------------------
// Phase-space flows.

enum class PhaseRepresentation { kCotangent, kTangent };

template <int D>
struct PhaseState {
  Vec<D> position = Vec<D>::Zero();  // lifted; wrap with `wrap` for torus coordinates
  Vec<D> fiber = Vec<D>::Zero();     // momentum (cotangent) or velocity (tangent)
  PhaseRepresentation representation = PhaseRepresentation::kCotangent;
};

template <int D>
PhaseState<D> to_tangent(const HamiltonianSpec<D>& H, const PhaseState<D>& s) {
  if (s.representation == PhaseRepresentation::kTangent) return s;
  return {s.position, H.grad_p(s.position, s.fiber), PhaseRepresentation::kTangent};
}

template <int D>
PhaseState<D> to_cotangent(const LagrangianSpec<D>& L, const PhaseState<D>& s) {
  if (s.representation == PhaseRepresentation::kCotangent) return s;
  return {s.position, L.grad_v(s.position, s.fiber), PhaseRepresentation::kCotangent};
}

/// Classical RK4 for  x' = H_p, p' = -H_x  over signed duration t. Position stays lifted.
template <int D>
PhaseState<D> hamiltonian_flow(const HamiltonianSpec<D>& H, const PhaseState<D>& s0, double t, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("hamiltonian_flow: dt must be positive");
  if (s0.representation != PhaseRepresentation::kCotangent)
    throw InvalidArgument("hamiltonian_flow expects a cotangent state");
  Vec<D> x = s0.position;
  Vec<D> p = s0.fiber;
  if (t == 0.0) return s0;
  const int steps = static_cast<int>(std::ceil(std::abs(t) / dt - 1e-12));
  const double h = t / steps;
  for (int k = 0; k < steps; ++k) {
    const Vec<D> k1x = H.grad_p(x, p), k1p = -H.grad_x(x, p);
    const Vec<D> x2 = x + 0.5 * h * k1x, p2 = p + 0.5 * h * k1p;
    const Vec<D> k2x = H.grad_p(x2, p2), k2p = -H.grad_x(x2, p2);
    const Vec<D> x3 = x + 0.5 * h * k2x, p3 = p + 0.5 * h * k2p;
    const Vec<D> k3x = H.grad_p(x3, p3), k3p = -H.grad_x(x3, p3);
    const Vec<D> x4 = x + h * k3x, p4 = p + h * k3p;
    const Vec<D> k4x = H.grad_p(x4, p4), k4p = -H.grad_x(x4, p4);
    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
  }
  return {x, p, PhaseRepresentation::kCotangent};
}

/// RK4 for the Euler-Lagrange system  x' = v,  L_vv v' = L_x - L_vx v.
template <int D>
PhaseState<D> euler_lagrange_flow(const LagrangianSpec<D>& L, const PhaseState<D>& s0, double t, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("euler_lagrange_flow: dt must be positive");
  if (s0.representation != PhaseRepresentation::kTangent)
    throw InvalidArgument("euler_lagrange_flow expects a tangent state");
  if (t == 0.0) return s0;
  auto accel = [&L](const Vec<D>& x, const Vec<D>& v) -> Vec<D> {
    const auto d = L.derivatives(x, v);
    // d/dt L_v = L_vv v' + (d L_v / dx) v, and (d L_v/dx)(i,j) = lxv(j, i).
    return d.lvv.ldlt().solve(d.lx - d.lxv.transpose() * v);
  };
  Vec<D> x = s0.position;
  Vec<D> v = s0.fiber;
  const int steps = static_cast<int>(std::ceil(std::abs(t) / dt - 1e-12));
  const double h = t / steps;
  for (int k = 0; k < steps; ++k) {
    const Vec<D> k1x = v, k1v = accel(x, v);
    const Vec<D> k2x = v + 0.5 * h * k1v, k2v = accel(x + 0.5 * h * k1x, k2x);
    const Vec<D> k3x = v + 0.5 * h * k2v, k3v = accel(x + 0.5 * h * k2x, k3x);
    const Vec<D> k4x = v + h * k3v, k4v = accel(x + h * k3x, k4x);
    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }
  return {x, v, PhaseRepresentation::kTangent};
}

}  // namespace wkam
