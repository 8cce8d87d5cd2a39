#include <gtest/gtest.h>

#include <random>

#include "pendulum_fixture.hpp"

using namespace wkam;
using wkam::fixture::kPi;
using wkam::fixture::Pendulum;
using wkam::fixture::PendulumCut;

namespace {

GridField<1> random_field(const Grid<1>& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a(-1.0, 1.0);
  const double c1 = a(rng), c2 = a(rng), c3 = a(rng);
  return GridField<1>::from_function(g, [&](const Vec<1>& x) {
    return c1 * std::cos(x[0]) + c2 * std::sin(2.0 * x[0]) + 0.3 * c3 * std::cos(3.0 * x[0] + 1.0);
  });
}

}  // namespace

TEST(WeakKamSolve, PendulumCriticalValue) {
  const auto& p = Pendulum::get();
  EXPECT_TRUE(p.sol.converged);
  EXPECT_NEAR(p.sol.c_value, 1.0, 1e-2);
  EXPECT_LE(p.sol.residual, 1e-6);
}

TEST(WeakKamSolve, PendulumMatchesClosedFormUpToConstant) {
  const auto& p = Pendulum::get();
  const auto& g = p.phi().grid();
  double shift = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f) shift += (p.phi()[f] - fixture::pendulum_closed_form(g.node(f)[0])) / g.size();
  double err = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f)
    err = std::max(err, std::abs(p.phi()[f] - shift - fixture::pendulum_closed_form(g.node(f)[0])));
  EXPECT_LE(err, 2e-2);
}

TEST(WeakKamSolve, FreeParticleIsConstant) {
  const auto r = weak_kam_solve<1>(free_particle<1>(), 128, 0.2);
  EXPECT_NEAR(r.c_value, 0.0, 1e-12);
  EXPECT_LE(r.phi.max() - r.phi.min(), 1e-12);
}

TEST(WeakKamSolve, ShiftedQuadraticCriticalValue) {
  const auto r = weak_kam_solve<1>(shifted_quadratic<1>(vec1(0.3)), 128, 0.2);
  EXPECT_NEAR(r.c_value, 0.045, 1e-6);
}

TEST(WeakKamSolve, RejectsBadArguments) {
  EXPECT_THROW(weak_kam_solve<1>(pendulum(), 32, 0.2), InvalidArgument);
  EXPECT_THROW(weak_kam_solve<1>(pendulum(), 128, 0.0), InvalidArgument);
  EXPECT_THROW(weak_kam_solve<1>(pendulum(), 128, 1.5), InvalidArgument);
}

TEST(LaxOleinikOperators, FixedPointWithCriticalShift) {
  const auto& p = Pendulum::get();
  const auto& lo = p.solver->lax_oleinik();
  for (double t : {0.1, 0.5, 1.0}) {
    const auto u = lo.t_minus(p.phi(), t).shifted(p.sol.c_value * t);
    EXPECT_LE(u.sup_distance(p.phi()), 1e-4) << "t = " << t;
  }
}

TEST(LaxOleinikOperators, SemigroupProperty) {
  const auto& p = Pendulum::get(256);
  const auto& lo = p.solver->lax_oleinik();
  const auto u = random_field(p.phi().grid(), 3);
  const auto a = lo.t_minus(lo.t_minus(u, 0.15), 0.25);
  const auto b = lo.t_minus(u, 0.4);
  EXPECT_LE(a.sup_distance(b), 5e-3);
}

TEST(LaxOleinikOperators, MonotoneAndCommuteWithConstants) {
  const auto& p = Pendulum::get(256);
  const auto& lo = p.solver->lax_oleinik();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto u = random_field(p.phi().grid(), seed);
    auto v = u;
    for (std::size_t f = 0; f < v.size(); ++f) v.mutable_values()[f] += 0.1 + 0.05 * std::sin(static_cast<double>(f));
    const auto tu = lo.t_minus(u, 0.2), tv = lo.t_minus(v, 0.2);
    for (std::size_t f = 0; f < u.size(); ++f) ASSERT_LE(tu[f], tv[f] + 1e-12);
    const auto shifted = lo.t_plus(u.shifted(0.7), 0.2);
    EXPECT_LE(shifted.sup_distance(lo.t_plus(u, 0.2).shifted(0.7)), 1e-12);
  }
}

TEST(LaxOleinikOperators, CompositionOrdering) {
  const auto& p = Pendulum::get(256);
  const auto& lo = p.solver->lax_oleinik();
  const double tol = p.h() * p.h();  // interpolation error of the grid operators
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto u = random_field(p.phi().grid(), seed);
    const auto up = lo.t_minus(lo.t_plus(u, 0.3), 0.3);
    const auto down = lo.t_plus(lo.t_minus(u, 0.3), 0.3);
    for (std::size_t f = 0; f < u.size(); ++f) {
      ASSERT_GE(up[f], u[f] - tol);
      ASSERT_LE(down[f], u[f] + tol);
    }
  }
}

TEST(LaxOleinikOperators, RegularizationIdentityBelowTau) {
  const auto& p = Pendulum::get();
  const auto& lo = p.solver->lax_oleinik();
  const double tau = p.solver->tau_step();
  for (double t : {0.25 * tau, 0.5 * tau, 0.9 * tau}) {
    const auto u = lo.t_minus(lo.t_plus(p.phi(), t), t);
    EXPECT_LE(u.sup_distance(p.phi()), 2e-3) << "t = " << t;
  }
}

TEST(LaxOleinikOperators, PointOperatorsMatchGridAtNodes) {
  const auto& p = Pendulum::get();
  const auto& lo = p.solver->lax_oleinik();
  const double t = 0.2;
  const auto grid_plus = lo.t_plus(p.phi(), t);
  const auto grid_minus = lo.t_minus(p.phi(), t);
  for (std::size_t f = 3; f < p.phi().size(); f += 61) {
    const Vec<1> x = p.phi().grid().node(f);
    EXPECT_NEAR(t_plus_point(p.phi(), p.L, t, x, lo.lambda()).value, grid_plus[f], 1e-5);
    EXPECT_NEAR(t_minus_point(p.phi(), p.L, t, x, lo.lambda()).value, grid_minus[f], 1e-5);
  }
}

TEST(LaxOleinikOperators, RejectsNegativeTime) {
  const auto& p = Pendulum::get(256);
  EXPECT_THROW(p.solver->lax_oleinik().t_minus(p.phi(), -0.1), DegenerateTime);
}

TEST(CommutatorDefect, NonNegative) {
  const auto& p = Pendulum::get();
  const auto d = commutator_defect_field(p.solver->lax_oleinik(), p.phi(), 0.3);
  EXPECT_GE(d.min(), -1e-6);
}

TEST(CutTime, SingularPointAndAubryPoint) {
  const auto& p = Pendulum::get();
  const PendulumCut c(p, 1.0, 0.05);
  EXPECT_LE(c.cut.tau[0], 0.05);
  EXPECT_DOUBLE_EQ(c.cut.tau[256], 1.0);
  // Defect separation at one ladder step.
  const double at0 = c.ladder->defect_at_node(1, 0);
  const double atpi = c.ladder->defect_at_node(c.ladder->steps(), 256);
  EXPECT_GE(at0, 10.0 * c.cal.defect_tol);
  EXPECT_LE(atpi, c.cal.defect_tol);
}

TEST(CutTime, GrowsAwayFromTheCorner) {
  const auto& p = Pendulum::get();
  const PendulumCut c(p, 1.0, 0.05);
  // Backward calibrated curves from x reach the corner at 0 after a time increasing in the
  // distance to 0, so tau is non-decreasing on (0, pi] up to one bisection step.
  const double step = c.ladder->delta() / 256.0;
  for (int i = 8; i < 256; i += 8) EXPECT_GE(c.cut.tau[i + 8], c.cut.tau[i] - step) << "node " << i;
  for (int i = 8; i < 256; i += 8) EXPECT_NEAR(c.cut.tau[i], c.cut.tau[512 - i], 2e-2) << "node " << i;
}

TEST(CutTime, PointwiseBisectionBracketsTheCrossing) {
  const auto& p = Pendulum::get(256);
  const PendulumCut c(p, 1.0, 0.05);
  const auto& lo = p.solver->lax_oleinik();
  const double resolution = c.ladder->delta() / 256.0;
  for (int f : {20, 64}) {
    const Vec<1> x = p.phi().grid().node(f);
    const double tau = cut_time(lo, p.phi(), x, 1.0, c.cal.defect_tol, c.ladder.get(), 8);
    EXPECT_NEAR(tau, c.cut.tau[f], c.ladder->delta()) << "node " << f;
    if (tau > 0.0) {
      EXPECT_LE(commutator_defect(lo, p.phi(), tau, x), c.cal.defect_tol);
    }
    EXPECT_GT(commutator_defect(lo, p.phi(), tau + resolution, x), c.cal.defect_tol);
  }
}

TEST(CutTime, CalibrationFloor) {
  const auto& p = Pendulum::get();
  const PendulumCut c(p, 1.0, 0.05);
  EXPECT_GE(c.cal.defect_tol, 1e-4);
  EXPECT_GT(c.cal.probe_count, 0u);
  EXPECT_FALSE(c.cal.used_fallback);
}

TEST(ShortTime, PendulumConstants) {
  const auto& p = Pendulum::get();
  const auto& k = p.solver->constants();
  EXPECT_NEAR(k.C1, 1.0, 5e-2);
  EXPECT_GT(k.tau_phi_step, 0.05);
  EXPECT_GE(k.lambda, 2.0);
}
