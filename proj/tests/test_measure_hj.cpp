#include <gtest/gtest.h>

#include <random>

#include "pendulum_fixture.hpp"

using namespace wkam;
using wkam::fixture::kPi;
using wkam::fixture::Pendulum;
using wkam::fixture::PendulumCut;

namespace {

double average_phi(const GridField<1>& phi, const EmpiricalMeasure<1>& mu) {
  double acc = 0.0;
  for (const auto& x : mu.points) acc += phi.value(x);
  return acc / static_cast<double>(mu.size());
}

}  // namespace

TEST(DynamicalCost, DiracPairsReduceToTheAction) {
  const auto& p = Pendulum::get(256);
  for (const auto& [x, y] : {std::pair{0.3, 1.1}, std::pair{2.0, 5.5}, std::pair{kPi, 0.1}}) {
    const auto plan = dynamical_cost(p.L, EmpiricalMeasure<1>::dirac(vec1(x)), EmpiricalMeasure<1>::dirac(vec1(y)), 0.7);
    EXPECT_NEAR(plan.cost, fundamental_solution(p.L, 0.7, vec1(x), vec1(y)).value, 1e-10);
    EXPECT_EQ(plan.sigma, std::vector<int>{0});
  }
}

TEST(DynamicalCost, FreeParticleMatchesSquaredDistance) {
  const auto H = free_particle<1>();
  const LagrangianSpec<1> L(H);
  // Sorted pairing on a short arc: cost = (1/n) sum d^2 / (2t).
  const EmpiricalMeasure<1> mu{{vec1(0.1), vec1(0.5), vec1(0.9)}}, nu{{vec1(1.0), vec1(0.6), vec1(0.2)}};
  const auto plan = dynamical_cost(L, mu, nu, 1.0);
  EXPECT_EQ(plan.sigma, (std::vector<int>{2, 1, 0}));
  EXPECT_NEAR(plan.cost, (0.01 + 0.01 + 0.01) / 2.0 / 3.0, 1e-8);
}

TEST(DynamicalCost, RejectsMismatchedInputs) {
  const auto& p = Pendulum::get(256);
  const EmpiricalMeasure<1> a{{vec1(0.0), vec1(1.0)}}, b{{vec1(0.5)}};
  EXPECT_THROW(dynamical_cost(p.L, a, b, 1.0), SizeMismatch);
  EXPECT_THROW(dynamical_cost(p.L, a, a, 0.0), DegenerateTime);
  EXPECT_THROW(dynamical_cost(p.L, EmpiricalMeasure<1>{}, EmpiricalMeasure<1>{}, 1.0), InvalidArgument);
}

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = size(rng);
    std::vector<double> c(static_cast<std::size_t>(n * n));
    for (auto& v : c) v = u(rng);
    const auto fast = solve_assignment(c, n), slow = brute_force_assignment(c, n);
    EXPECT_NEAR(fast.cost, slow.cost, 1e-12) << "trial " << trial;
    std::vector<int> s = fast.sigma;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < n; ++i) ASSERT_EQ(s[i], i);
  }
  EXPECT_THROW(solve_assignment({1.0, 2.0}, 2), SizeMismatch);
  EXPECT_THROW(brute_force_assignment(std::vector<double>(121, 0.0), 11), InvalidArgument);
}

TEST(Wasserstein, TorusWrapAndTranslation) {
  EXPECT_NEAR(wasserstein1<1>({vec1(0.1)}, {vec1(kTwoPi - 0.1)}), 0.2, 1e-12);
  const std::vector<Vec<1>> a = {vec1(0.0), vec1(2.0)}, b = {vec1(2.5), vec1(0.5)};
  EXPECT_NEAR(wasserstein1<1>(a, b), 0.5, 1e-12);
  EXPECT_THROW(wasserstein1<1>(a, {vec1(0.0)}), SizeMismatch);
}

TEST(MeasurePotential, FixedPointOfTheMinusSemigroup) {
  const auto& p = Pendulum::get();
  const double lambda = p.solver->lax_oleinik().config().lambda;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const auto mu = EmpiricalMeasure<1>::random(8, rng);
    for (double t : {0.2, 0.5}) {
      const double lhs = p_minus_potential(p.phi(), p.L, mu, t, lambda) + p.sol.c_value * t;
      EXPECT_NEAR(lhs, average_phi(p.phi(), mu), 5e-3) << "t = " << t;
    }
  }
  EXPECT_DOUBLE_EQ(p_minus_potential(p.phi(), p.L, EmpiricalMeasure<1>::dirac(vec1(1.0)), 0.0, lambda),
                   p.phi().value(vec1(1.0)));
  EXPECT_THROW(p_plus_potential(p.phi(), p.L, EmpiricalMeasure<1>::dirac(vec1(1.0)), -1.0, lambda), InvalidArgument);
}

TEST(MeasurePotential, PlusPotentialIsDominated) {
  // Domination gives T+ phi - ct <= phi, with equality only where a forward calibrated curve starts.
  const auto& p = Pendulum::get();
  const double lambda = p.solver->lax_oleinik().config().lambda;
  auto gap = [&](double x) {
    const auto d = EmpiricalMeasure<1>::dirac(vec1(x));
    return p.phi().value(vec1(x)) - (p_plus_potential(p.phi(), p.L, d, 0.5, lambda) - p.sol.c_value * 0.5);
  };
  for (double x = 0.05; x < kTwoPi; x += 0.5) EXPECT_GE(gap(x), -5e-3) << "x = " << x;
  EXPECT_GT(gap(0.0), 0.5);
  EXPECT_NEAR(gap(kPi), 0.0, 5e-3);
}

TEST(MeasurePotential, CompositionAgreesWithGridOperators) {
  const auto& p = Pendulum::get();
  std::mt19937_64 rng(3);
  const auto mu = EmpiricalMeasure<1>::random(6, rng);
  EXPECT_LE(composition_identity_check(p.solver->lax_oleinik(), p.phi(), mu, 0.2, 0.2), 1e-4);
  EXPECT_LE(composition_identity_check(p.solver->lax_oleinik(), p.phi(), mu, 0.3, 0.0), 1e-4);
}

TEST(MeasurePotential, JointMinimizationDecouples) {
  const auto& p = Pendulum::get(256);
  std::mt19937_64 rng(21);
  const auto mu = EmpiricalMeasure<1>::random(4, rng);
  const auto rep = p_minus_brute_force(p.phi(), p.L, mu, 0.3, p.solver->lax_oleinik().config().lambda, 40, rng);
  EXPECT_EQ(rep.improvements, 0);
  EXPECT_GE(rep.best_joint, rep.decoupled - 1e-9);
}

TEST(DisplacementInterpolation, EndpointsAndFreeMidpoint) {
  const auto H = free_particle<1>();
  const LagrangianSpec<1> L(H);
  const EmpiricalMeasure<1> mu{{vec1(0.2), vec1(1.0)}}, nu{{vec1(1.4), vec1(0.6)}};
  CouplingPlan plan;
  const auto path = displacement_interpolation(L, mu, nu, 1.0, {0.0, 0.5, 1.0}, &plan);
  ASSERT_EQ(path.size(), 3u);
  EXPECT_EQ(path[0].points[0][0], 0.2);
  EXPECT_EQ(path[2].points[0][0], nu.points[plan.sigma[0]][0]);
  // Straight lines at constant speed for the free particle.
  EXPECT_NEAR(path[1].points[0][0], 0.4, 1e-6);
  EXPECT_NEAR(path[1].points[1][0], 1.2, 1e-6);
  EXPECT_THROW(displacement_interpolation(L, mu, nu, 1.0, {1.5}), InvalidArgument);
}

TEST(MeasureCutTime, SupportMinimumMatchesOperatorRoute) {
  const auto& p = Pendulum::get();
  const PendulumCut c(p, 1.0, 0.05);
  const auto& lo = p.solver->lax_oleinik();
  const std::vector<EmpiricalMeasure<1>> cases = {
      {{vec1(0.0), vec1(2.0), vec1(kPi)}},
      {{vec1(2.5), vec1(3.5), vec1(2.9)}},
      {{vec1(1.0)}},
  };
  for (const auto& mu : cases) {
    const auto r = measure_cut_time(lo, p.phi(), *c.ladder, mu, c.cal.defect_tol);
    EXPECT_NEAR(r.min_over_support, *std::min_element(r.pointwise.begin(), r.pointwise.end()), 0.0);
    EXPECT_NEAR(r.operator_route, r.min_over_support, c.ladder->delta()) << mu.points[0][0];
  }
  const auto pi = measure_cut_time(lo, p.phi(), *c.ladder, EmpiricalMeasure<1>::dirac(vec1(kPi)), c.cal.defect_tol);
  EXPECT_DOUBLE_EQ(pi.min_over_support, 1.0);
  EXPECT_DOUBLE_EQ(pi.operator_route, 1.0);
  const auto corner = measure_cut_time(lo, p.phi(), *c.ladder, EmpiricalMeasure<1>::dirac(vec1(0.0)), c.cal.defect_tol);
  EXPECT_LE(corner.operator_route, 0.05);
}
