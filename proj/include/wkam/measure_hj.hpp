#pragma once

#include <random>

#include "wkam/assignment.hpp"
#include "wkam/lax_oleinik.hpp"

namespace wkam {

/// n points with weight 1/n each.
template <int D>
struct EmpiricalMeasure {
  std::vector<Vec<D>> points;

  std::size_t size() const { return points.size(); }
  void validate() const {
    if (points.empty()) throw InvalidArgument("empirical measure needs at least one point");
  }
  static EmpiricalMeasure dirac(const Vec<D>& x) { return {{x}}; }
  static EmpiricalMeasure random(std::size_t n, std::mt19937_64& rng, double period = kTwoPi) {
    std::uniform_real_distribution<double> u(0.0, period);
    EmpiricalMeasure m;
    m.points.resize(n);
    for (auto& p : m.points)
      for (int a = 0; a < D; ++a) p[a] = u(rng);
    return m;
  }
};

struct CouplingPlan {
  std::vector<int> sigma;
  std::vector<double> pair_cost;  // A_t(x_i, y_sigma(i))
  double cost = 0.0;              // (1/n) sum of pair costs
};

template <int D>
std::vector<double> action_cost_matrix(const LagrangianSpec<D>& L, const EmpiricalMeasure<D>& mu,
                                       const EmpiricalMeasure<D>& nu, double t, int threads = 1) {
  const std::size_t n = mu.size();
  std::vector<double> cost(n * n);
  parallel_for(n * n, threads, [&](std::size_t k) {
    cost[k] = fundamental_solution(L, t, mu.points[k / n], nu.points[k % n]).value;
  });
  return cost;
}

/// C^t(mu, nu) over equal-size empirical measures, solved exactly as an assignment problem.
template <int D>
CouplingPlan dynamical_cost(const LagrangianSpec<D>& L, const EmpiricalMeasure<D>& mu, const EmpiricalMeasure<D>& nu,
                            double t, int threads = 1) {
  mu.validate();
  nu.validate();
  if (mu.size() != nu.size()) throw SizeMismatch("dynamical cost needs equal support sizes");
  if (!(t > 0.0)) throw DegenerateTime("dynamical cost needs t > 0");
  const int n = static_cast<int>(mu.size());
  const auto cost = action_cost_matrix(L, mu, nu, t, threads);
  const auto a = solve_assignment(cost, n);
  CouplingPlan plan;
  plan.sigma = a.sigma;
  for (int i = 0; i < n; ++i) plan.pair_cost.push_back(cost[static_cast<std::size_t>(i) * n + a.sigma[i]]);
  // Summed in index order so the value is reproducible from the plan alone.
  for (double c : plan.pair_cost) plan.cost += c;
  plan.cost /= n;
  return plan;
}

/// (1/n) sum_i T-_t phi(x_i): the infimum over nu of Phi(nu) + C^t(nu, mu) for the potential
/// energy Phi(nu) = int phi dnu decouples per support point.
template <int D>
double p_minus_potential(const GridField<D>& phi, const LagrangianSpec<D>& L, const EmpiricalMeasure<D>& mu,
                         double t, double lambda) {
  if (t < 0.0) throw InvalidArgument("p_minus_potential needs t >= 0");
  double acc = 0.0;
  for (const auto& x : mu.points) acc += t == 0.0 ? phi.value(x) : t_minus_point(phi, L, t, x, lambda).value;
  return acc / static_cast<double>(mu.size());
}

template <int D>
double p_plus_potential(const GridField<D>& phi, const LagrangianSpec<D>& L, const EmpiricalMeasure<D>& mu,
                        double t, double lambda) {
  if (t < 0.0) throw InvalidArgument("p_plus_potential needs t >= 0");
  double acc = 0.0;
  for (const auto& x : mu.points) acc += t == 0.0 ? phi.value(x) : t_plus_point(phi, L, t, x, lambda).value;
  return acc / static_cast<double>(mu.size());
}

struct DecouplingCheck {
  double decoupled = 0.0;
  double best_joint = 0.0;  // smallest value found among random joint candidates
  int improvements = 0;     // joint candidates strictly below the decoupled value
};

/// Random joint candidates nu = (y_1..y_n) near the per-point minimizers, each scored as
/// Phi(nu) + C^t(nu, mu) with the optimal coupling.
template <int D>
DecouplingCheck p_minus_brute_force(const GridField<D>& phi, const LagrangianSpec<D>& L,
                                    const EmpiricalMeasure<D>& mu, double t, double lambda, int candidates,
                                    std::mt19937_64& rng) {
  DecouplingCheck rep;
  const std::size_t n = mu.size();
  std::vector<Vec<D>> ystar;
  for (const auto& x : mu.points) {
    const auto opt = t_minus_point(phi, L, t, x, lambda);
    ystar.push_back(opt.y);
    rep.decoupled += opt.value;
  }
  rep.decoupled /= static_cast<double>(n);
  rep.best_joint = std::numeric_limits<double>::infinity();
  std::normal_distribution<double> jitter(0.0, 0.1);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int c = 0; c < candidates; ++c) {
    EmpiricalMeasure<D> nu;
    for (std::size_t i = 0; i < n; ++i) {
      Vec<D> y = (c % 2 == 0) ? ystar[i] : ystar[pick(rng)];
      for (int a = 0; a < D; ++a) y[a] += jitter(rng);
      nu.points.push_back(y);
    }
    double pot = 0.0;
    for (const auto& y : nu.points) pot += phi.value(y);
    const double val = pot / static_cast<double>(n) + dynamical_cost(L, nu, mu, t).cost;
    rep.best_joint = std::min(rep.best_joint, val);
    if (val < rep.decoupled - 1e-9) ++rep.improvements;
  }
  return rep;
}

/// |P-_t P+_s Phi(mu) - average of (T-_t T+_s phi)(x_i)|: decoupled point operators on the
/// left, grid composition on the right.
template <int D>
double composition_identity_check(const LaxOleinik<D>& lo, const GridField<D>& phi, const EmpiricalMeasure<D>& mu,
                                  double t, double s) {
  const GridField<D> plus = s > 0.0 ? lo.t_plus(phi, s) : phi;
  const GridField<D> grid_side = t > 0.0 ? lo.t_minus(plus, t) : plus;
  const double lambda = lo.config().lambda;
  const double left = p_minus_potential(plus, lo.lagrangian(), mu, t, lambda);
  double right = 0.0;
  for (const auto& x : mu.points) right += grid_side.value(x);
  right /= static_cast<double>(mu.size());
  return std::abs(left - right);
}

/// mu_s along the optimal plan: pair i travels its minimizing arc from x_i to y_sigma(i).
template <int D>
std::vector<EmpiricalMeasure<D>> displacement_interpolation(const LagrangianSpec<D>& L, const EmpiricalMeasure<D>& mu,
                                                           const EmpiricalMeasure<D>& nu, double t,
                                                           const std::vector<double>& s_samples,
                                                           CouplingPlan* plan_out = nullptr) {
  const auto plan = dynamical_cost(L, mu, nu, t);
  std::vector<ActionResult<D>> arcs;
  for (std::size_t i = 0; i < mu.size(); ++i)
    arcs.push_back(fundamental_solution(L, t, mu.points[i], nu.points[static_cast<std::size_t>(plan.sigma[i])]));
  std::vector<EmpiricalMeasure<D>> out;
  for (double s : s_samples) {
    if (s < 0.0 || s > t) throw InvalidArgument("interpolation time outside [0, t]");
    EmpiricalMeasure<D> m;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      if (s == 0.0) m.points.push_back(mu.points[i]);
      else if (s == t) m.points.push_back(nu.points[static_cast<std::size_t>(plan.sigma[i])]);
      else m.points.push_back(wrap<D>(arcs[i].path.at(s), kTwoPi));
    }
    out.push_back(std::move(m));
  }
  if (plan_out) *plan_out = plan;
  return out;
}

struct MeasureCutTime {
  double min_over_support = 0.0;  // inf of pointwise cut times
  double operator_route = 0.0;    // bisection on the averaged commutator defect
  double resolution = 0.0;        // one bisection step
  std::vector<double> pointwise;
};

/// T_u(mu) two ways: the minimum of the pointwise cut times, and the first time the averaged
/// defect (1/n) sum (T-T+ phi - T+T- phi)(x_i) exceeds defect_tol / n.
template <int D>
MeasureCutTime measure_cut_time(const LaxOleinik<D>& lo, const GridField<D>& phi, const DefectLadder<D>& ladder,
                                const EmpiricalMeasure<D>& mu, double defect_tol, int bisect_iters = 8) {
  MeasureCutTime out;
  const double horizon = ladder.horizon();
  out.resolution = ladder.delta() / std::pow(2.0, bisect_iters);
  out.min_over_support = horizon;
  for (const auto& x : mu.points) {
    const double tau = cut_time(lo, phi, x, horizon, defect_tol, &ladder, bisect_iters);
    out.pointwise.push_back(tau);
    out.min_over_support = std::min(out.min_over_support, tau);
  }
  // T-T+ phi >= phi >= T+T- phi, so the averaged defect vanishes exactly when every support
  // point does; one point crossing defect_tol lifts the average above defect_tol / n.
  const double n = static_cast<double>(mu.size());
  const double tol = defect_tol / n;
  auto averaged = [&](auto&& defect_at) {
    double acc = 0.0;
    for (const auto& x : mu.points) acc += defect_at(x);
    return acc / n;
  };
  const int M = ladder.steps();
  int j = 0;
  while (j < M && averaged([&](const Vec<D>& x) { return ladder.defect_at(j + 1, x); }) <= tol) ++j;
  if (j == M) {
    out.operator_route = horizon;
    return out;
  }
  double t_lo = ladder.time(j), t_hi = ladder.time(j + 1);
  for (int it = 0; it < bisect_iters; ++it) {
    const double mid = 0.5 * (t_lo + t_hi);
    const auto field = commutator_defect_field(lo, phi, mid);
    if (averaged([&](const Vec<D>& x) { return field.value(x); }) <= tol) t_lo = mid;
    else t_hi = mid;
  }
  out.operator_route = t_lo;
  return out;
}

}  // namespace wkam
