// Pendulum cut-time profile: solves for the weak KAM solution, builds the commutator-defect
// ladder and prints tau(x) on a coarse sample of nodes next to the singular mask.
#include <cstdio>

#include "wkam/wkam.hpp"

int main(int argc, char** argv) {
  const int n = argc > 1 ? std::atoi(argv[1]) : 512;
  const auto H = wkam::pendulum();
  const wkam::LagrangianSpec<1> L(H);
  const auto sol = wkam::weak_kam_solve<1>(H, n, 0.2, 1e-9, 5000, 4);
  std::printf("c[H] = %.6f after %d iterations (residual %.2e)\n", sol.c_value, sol.iterations, sol.residual);

  const auto solver = wkam::CharacteristicSolver<1>::create(sol.phi, L, 4);
  const auto& lo = solver.lax_oleinik();
  auto ladder = std::make_shared<const wkam::DefectLadder<1>>(wkam::DefectLadder<1>::build(lo, sol.phi, 1.0, 0.05));
  const auto cal = wkam::calibrate_defect_tol(*ladder, wkam::aubry_probes(H, sol.phi.grid(), sol.c_value));
  const auto cut = wkam::cut_time_field(ladder, cal.defect_tol);
  const auto mask = wkam::singular_mask(sol.phi, 0.0, solver.slope_tol(), 4);

  std::printf("defect_tol = %.3e, tau(phi) step = %.4f, singular nodes = %zu\n", cal.defect_tol,
              solver.constants().tau_phi_step, mask.count());
  std::printf("%10s %12s %10s %8s\n", "x", "phi", "cut_time", "singular");
  const auto& g = sol.phi.grid();
  for (std::size_t f = 0; f < g.size(); f += g.size() / 32) {
    const double x = g.node(f)[0];
    std::printf("%10.5f %12.6f %10.5f %8d\n", x, sol.phi[f], cut.tau[f], int(mask.singular[f]));
  }
  return 0;
}
