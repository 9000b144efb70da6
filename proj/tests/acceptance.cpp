// Runs the suites with runtime checks and prints one line per criterion.
// With arguments only the named suites run.
#include <cstdio>
#include <cstdlib>

#include "rgqed3/suites.hpp"

using namespace rgqed3;

int main(int argc, char** argv) {
  RunConfig cfg;
  cfg.timing = true;
  for (int i = 1; i < argc; ++i) cfg.suites.push_back(argv[i]);
  if (cfg.suites.empty()) cfg.suites = suite_names();
  if (const char* t = std::getenv("RGQED3_THREADS")) cfg.threads = std::atoi(t);
  std::vector<SuiteResult> results;
  try {
    results = run_suites(cfg);
  } catch (const std::exception& e) {
    std::printf("error: %s\n", e.what());
    return 2;
  }
  int failed = 0;
  for (const auto& r : results) {
    std::printf("criterion %2d %-15s %s (%zu checks)\n", r.criterion, r.suite.c_str(), r.pass() ? "PASS" : "FAIL",
                r.checks.size());
    for (const auto& c : r.checks)
      std::printf("    %-4s %-40s %.3e %s %.3e\n", c.pass ? "ok" : "FAIL", c.name.c_str(), c.residual, c.relation.c_str(),
                  c.tolerance);
    failed += !r.pass();
  }
  std::printf("%d of %zu criteria pass\n", int(results.size()) - failed, results.size());
  return failed ? 1 : 0;
}
