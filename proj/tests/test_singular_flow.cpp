#include <gtest/gtest.h>

#include "pendulum_fixture.hpp"

using namespace wkam;
using wkam::fixture::kPi;
using wkam::fixture::Pendulum;
using wkam::fixture::PendulumCut;

namespace {

double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

/// Closed-form solution of x' = -2 cos(x/2) started in (0, pi): with u = x/2, tan(u/2 + pi/4)
/// decays like e^{-t}, so the path reaches the corner at 0 in finite time and stays there.
double closed_form_sharp_path(double x0, double t) {
  const double w = std::tan(0.25 * x0 + 0.25 * kPi) * std::exp(-t);
  return std::max(0.0, 4.0 * (std::atan(w) - 0.25 * kPi));
}

}  // namespace

TEST(PartitionScheme, NextPointIsStrictlyAfter) {
  const auto P = PartitionScheme::uniform(0.1, 1.0);
  EXPECT_NEAR(P.next_after(0.0), 0.1, 1e-15);
  EXPECT_NEAR(P.next_after(0.05), 0.1, 1e-15);
  // At a partition point the next one is a full width away.
  EXPECT_NEAR(P.next_after(0.1), 0.2, 1e-15);
  EXPECT_NEAR(P.width(), 0.1, 1e-15);
  EXPECT_THROW(PartitionScheme({0.2, 0.1}), InvalidArgument);
  EXPECT_THROW(PartitionScheme({}), InvalidArgument);
}

TEST(Mollify, PreservesMeanAndSmooths) {
  const auto& p = Pendulum::get();
  const auto m = mollify(p.phi(), 0.1);
  EXPECT_NEAR(m.mean(), p.phi().mean(), 1e-12);
  EXPECT_LE(m.sup_distance(p.phi()), 0.1 * 2.0 + 1e-2);
  const auto sd = superdifferential(m, vec1(0.0));
  EXPECT_LT(sd.diameter(), 0.5 * superdifferential(p.phi(), vec1(0.0)).diameter());
  EXPECT_LE(mollify(p.phi(), 0.05).sup_distance(p.phi()), m.sup_distance(p.phi()));
}

TEST(StrictSingularCharacteristic, MatchesClosedFormOnRegularArc) {
  const auto& p = Pendulum::get();
  for (double x0 : {0.5, 1.5, 2.5}) {
    const auto path = p.solver->strict_singular_characteristic(vec1(x0), 2.0, 1e-3);
    for (double t : {0.5, 1.0, 2.0}) EXPECT_NEAR(path.at(t)[0], closed_form_sharp_path(x0, t), 5e-3) << x0 << " " << t;
  }
}

TEST(StrictSingularCharacteristic, SymmetricStartsMirror) {
  const auto& p = Pendulum::get();
  const auto a = p.solver->strict_singular_characteristic(vec1(1.0), 1.0, 1e-3);
  const auto b = p.solver->strict_singular_characteristic(vec1(kTwoPi - 1.0), 1.0, 1e-3);
  for (double t : {0.25, 0.5, 1.0}) EXPECT_NEAR(a.at(t)[0], kTwoPi - b.at(t)[0], 1e-3);
}

TEST(StrictSingularCharacteristic, RestsAtTheCornerAndTheEquilibrium) {
  const auto& p = Pendulum::get();
  const auto at0 = p.solver->strict_singular_characteristic(vec1(0.0), 1.0, 1e-3);
  const auto atpi = p.solver->strict_singular_characteristic(vec1(kPi), 1.0, 1e-3);
  for (std::size_t i = 0; i < at0.size(); ++i) EXPECT_NEAR(torus_distance<1>(at0.position(i), vec1(0.0), kTwoPi), 0.0, 1e-12);
  for (std::size_t i = 0; i < atpi.size(); ++i) EXPECT_NEAR(atpi.position(i)[0], kPi, 1e-6);
}

TEST(StrictSingularCharacteristic, StopsAtTheCornerWithoutChattering) {
  const auto& p = Pendulum::get();
  const auto path = p.solver->strict_singular_characteristic(vec1(0.3), 3.0, 1e-3);
  EXPECT_NEAR(torus_distance<1>(path.position(path.size() - 1), vec1(0.0), kTwoPi), 0.0, 1e-9);
  // Once at the corner the position never moves again.
  std::size_t arrive = path.size();
  for (std::size_t i = 0; i < path.size(); ++i)
    if (torus_distance<1>(path.position(i), vec1(0.0), kTwoPi) < 1e-9) {
      arrive = i;
      break;
    }
  ASSERT_LT(arrive, path.size());
  for (std::size_t i = arrive; i < path.size(); ++i) EXPECT_LT(torus_distance<1>(path.position(i), vec1(0.0), kTwoPi), 1e-9);
}

TEST(StrictSingularCharacteristic, RejectsCoarseStep) {
  const auto& p = Pendulum::get(256);
  EXPECT_THROW(p.solver->strict_singular_characteristic(vec1(1.0), 1.0, 0.05), InvalidArgument);
}

TEST(Edi, ResidualSmallAlongSharpPaths) {
  const auto& p = Pendulum::get();
  for (double x0 : {0.0, 0.3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0}) {
    auto path = p.solver->strict_singular_characteristic(vec1(x0), 2.0, 1e-3);
    EXPECT_LE(edi_residual(path, p.phi(), p.H, 1.0).max_per_unit_time, 1e-3) << "x0 = " << x0;
  }
}

TEST(Edi, DetectsAWrongSpeed) {
  const auto& p = Pendulum::get();
  auto path = p.solver->strict_singular_characteristic(vec1(2.0), 1.0, 1e-3);
  // Same curve traversed at half speed is not a maximal slope curve.
  auto slow = path;
  for (double& t : slow.times) t *= 2.0;
  EXPECT_GT(edi_residual(slow, p.phi(), p.H, 1.0).max_per_unit_time, 1e-2);
}

TEST(Intrinsic, StepIsLocalMaximizer) {
  const auto& p = Pendulum::get();
  const double tau = 0.05;
  for (double x : {0.5, 2.0, 4.0}) {
    const auto opt = p.solver->intrinsic_step_detail(vec1(x), tau);
    const double best = p.phi().value(opt.y) - fundamental_solution(p.L, tau, vec1(x), opt.y).value;
    for (double dy : {-0.02, -0.005, 0.005, 0.02}) {
      const Vec<1> y = opt.y + vec1(dy);
      EXPECT_LE(p.phi().value(y) - fundamental_solution(p.L, tau, vec1(x), y).value, best + 1e-7);
    }
  }
  EXPECT_THROW(p.solver->intrinsic_step(vec1(1.0), 2.0 * p.solver->tau_step()), StepTooLarge);
}

TEST(Intrinsic, ConvergesToTheSharpPath) {
  const auto& p = Pendulum::get();
  // Sup-distance bounded by a multiple of the step: here the constant is at most 1.
  std::vector<double> err;
  const std::vector<double> taus{0.1, 0.05, 0.025};
  for (double tau : taus) {
    double e = 0.0;
    for (double x0 : {0.0, 1.0, 3.0, 5.0}) {
      const auto ref = p.solver->strict_singular_characteristic(vec1(x0), 2.0, 1e-4);
      e = std::max(e, path_sup_distance(ref, p.solver->intrinsic_characteristic(vec1(x0), tau, 2.0)));
    }
    err.push_back(e);
  }
  EXPECT_LT(err[1], err[0]);
  EXPECT_LT(err[2], err[1]);
  for (std::size_t k = 0; k < taus.size(); ++k) EXPECT_LE(err[k], taus[k]) << "tau = " << taus[k];
}

TEST(MinimizingMovement, GeneralizedCharacteristicInclusion) {
  const auto& p = Pendulum::get();
  const double tau = 0.025;
  for (double x0 : {0.3, 1.0, 2.0, 4.0, 5.5}) {
    auto path = p.solver->minimizing_movement_forward(vec1(x0), tau, 3.0);
    EXPECT_LE(max_of(gc_inclusion_residual(path, p.phi(), p.H, p.solver->lambda() * tau)), 5e-2) << "x0 = " << x0;
  }
}

TEST(MinimizingMovement, BackwardFromTheCornerSplitsInTwo) {
  const auto& p = Pendulum::get();
  const auto branches = p.solver->minimizing_movement_backward(vec1(0.0), 0.05, 1.0);
  ASSERT_EQ(branches.size(), 2u);
  std::vector<double> mom{branches[0].initial_momentum[0], branches[1].initial_momentum[0]};
  std::sort(mom.begin(), mom.end());
  EXPECT_NEAR(mom[0], -2.0, 0.05);
  EXPECT_NEAR(mom[1], 2.0, 0.05);
  for (const auto& b : branches) EXPECT_LE(b.el_residual, 1e-3);
}

TEST(MinimizingMovement, BackwardFromRegularPointsIsClassical) {
  const auto& p = Pendulum::get();
  for (double x0 : {0.5, 1.5, 2.5, 3.5, 4.5, 5.5}) {
    const auto branches = p.solver->minimizing_movement_backward(vec1(x0), 0.05, 2.0);
    ASSERT_EQ(branches.size(), 1u) << "x0 = " << x0;
    EXPECT_LE(branches[0].el_residual, 1e-3) << "x0 = " << x0;
    // Backward calibrated curves move away from the corner towards pi.
    const double end = wrap_coordinate(branches[0].path.lifted.back()[0], kTwoPi);
    EXPECT_LT(std::abs(end - kPi), std::abs(x0 - kPi) + 1e-9) << "x0 = " << x0;
  }
}

TEST(Propagation, CutPointsStayInTheCut) {
  const auto& p = Pendulum::get();
  const PendulumCut c(p, 1.0, 0.05);
  const auto in_cut = cut_membership(c.cut, 0.05);
  for (std::size_t f = 0; f < 512; ++f) {
    if (!in_cut(p.phi().grid().node(f))) continue;
    const auto path = p.solver->strict_singular_characteristic(p.phi().grid().node(f), 5.0, 1e-3);
    const auto rep = propagation_check(path, in_cut);
    EXPECT_TRUE(rep.started_in_cut);
    EXPECT_EQ(rep.violations, 0u) << "node " << f << " leaves at t = " << rep.first_violation_time;
  }
}

TEST(WDelta, ApproachesTheSharpPath) {
  // Every distinct offset to the next partition point needs its own regularized field, so this
  // runs on the coarser grid with a coarse time step.
  const auto& p = Pendulum::get(256);
  const auto ref = p.solver->strict_singular_characteristic(vec1(1.0), 1.0, 1e-3);
  double prev = std::numeric_limits<double>::infinity();
  for (double w : {0.2, 0.1, 0.05}) {
    const auto path = p.solver->w_delta_characteristic(vec1(1.0), PartitionScheme::uniform(w, 1.0), 1.0, 1e-2);
    const double d = path_sup_distance(ref, path);
    EXPECT_LE(d, prev + 2.0 * p.h()) << "width " << w;
    prev = d;
  }
  EXPECT_LE(prev, 0.1);
  EXPECT_THROW(p.solver->w_delta_field(PartitionScheme::uniform(1.0, 2.0), 0.0, vec1(1.0)), StepTooLarge);
}

TEST(Mollified, ScheduleValidationAndCauchyBehaviour) {
  const auto& p = Pendulum::get();
  EXPECT_THROW(p.solver->mollified_generalized_characteristic(vec1(1.0), 1.0, {p.h()}), InvalidArgument);
  EXPECT_THROW(p.solver->mollified_generalized_characteristic(vec1(1.0), 1.0, {0.1, 0.2}), InvalidArgument);
  const auto res = p.solver->mollified_generalized_characteristic(vec1(1.0), 1.0, {0.2, 0.1, 0.05});
  ASSERT_EQ(res.paths.size(), 3u);
  EXPECT_LE(res.pairwise[1][2], res.pairwise[0][1] + 2.0 * p.h());
  const auto ref = p.solver->strict_singular_characteristic(vec1(1.0), 1.0, 1e-3);
  EXPECT_LE(path_sup_distance(ref, res.limit), 0.1);
}

TEST(Stability, MollifiedPhiMovesThePathContinuously) {
  const auto& p = Pendulum::get();
  const auto H2 = pendulum(1.02);
  const auto rep = stability_experiment(*p.solver, vec1(1.0), 1.0, 1e-3, {0.2, 0.1, 0.05}, &H2, 0.02);
  EXPECT_TRUE(rep.monotone);
  EXPECT_LE(rep.eps_distance.back(), 0.1);
  EXPECT_LE(rep.h_distance, 0.05);
}

TEST(RightDerivative, EnergyAveragesConverge) {
  const auto& p = Pendulum::get();
  const auto path = p.solver->strict_singular_characteristic(vec1(1.0), 2.0, 1e-3);
  EXPECT_GE(right_derivative_consistency(*p.solver, path, {0.1, 0.05, 0.01}), 0.9);
}

TEST(PathDistance, MetricBasics) {
  const auto& p = Pendulum::get();
  const auto a = p.solver->strict_singular_characteristic(vec1(1.0), 1.0, 1e-3);
  const auto b = p.solver->strict_singular_characteristic(vec1(1.2), 1.0, 1e-3);
  EXPECT_DOUBLE_EQ(path_sup_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(path_sup_distance(a, b), path_sup_distance(b, a));
  // The starts differ by 0.2 and the paths separate further before both reach the corner.
  EXPECT_GE(path_sup_distance(a, b), 0.2 - 1e-12);
  EXPECT_LE(path_sup_distance(a, b), 0.5);
}

TEST(FittedOrder, RecoversAPowerLaw) {
  const std::vector<double> taus{0.1, 0.05, 0.025, 0.0125};
  std::vector<double> err;
  for (double t : taus) err.push_back(3.0 * std::pow(t, 1.5));
  EXPECT_NEAR(fitted_order(taus, err), 1.5, 1e-12);
  EXPECT_THROW(fitted_order({0.1}, {0.2}), InvalidArgument);
  EXPECT_THROW(fitted_order({0.1, 0.2}, {0.2}), SizeMismatch);
}
