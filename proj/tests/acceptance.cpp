// Runs the nine acceptance criteria and prints one verdict line each.
// Usage: acceptance [seed] [workers]
#include <cstdlib>
#include <iostream>
#include <string>

#include "spdelab/cli.hpp"

int main(int argc, char** argv) {
  spdelab::RunConfig cfg;
  if (argc > 1) cfg.run.seed = std::stoull(argv[1]);
  if (argc > 2) cfg.run.workers = static_cast<unsigned>(std::stoul(argv[2]));
  bool all = true;
  try {
    spdelab::cli::detail::run_suite("acceptance", cfg, [&](const spdelab::CriterionOutcome& o) {
      std::cout << spdelab::cli::detail::outcome_line(o) << std::endl;
      all = all && o.pass;
    });
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (all ? "acceptance: all criteria pass" : "acceptance: FAILED") << std::endl;
  return all ? EXIT_SUCCESS : EXIT_FAILURE;
}
