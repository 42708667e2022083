// Transport noise sigma u_x dW on the circle: Euler-Maruyama against the
// shifted heat solution, two refinements, printed as a table.
#include <cstdio>
#include <cstdlib>

#include "spdelab/families.hpp"
#include "spdelab/verify.hpp"

int main(int argc, char** argv) {
  spdelab::FamilyParams p;
  p.modes = 1;
  p.horizon = 0.25;
  p.sigma0 = argc > 1 ? std::atof(argv[1]) : 1.0;

  spdelab::ConvergenceConfig cfg;
  cfg.points = {32, 64, 128};
  cfg.samples = 32;
  cfg.tolerance = 0.1;

  const spdelab::ConvergenceTable t = spdelab::convergence_study(spdelab::build_family(p), cfg);
  std::printf("%6s %8s %12s %12s %12s\n", "N", "steps", "error", "stderr", "rel");
  for (const auto& r : t.rows)
    std::printf("%6zu %8zu %12.4e %12.4e %12.4e\n", r.points, r.n_steps, r.error, r.error_std_error, r.relative_error);
  for (std::size_t k = 0; k < t.ratios.size(); ++k)
    std::printf("ratio %zu: %.3f (rate %.3f)\n", k, t.ratios[k], t.rates[k]);
  std::printf("%s\n", t.pass ? "pass" : "fail");
  return t.pass ? 0 : 1;
}
