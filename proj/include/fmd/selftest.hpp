#pragma once

#include <string>
#include <vector>

namespace fmd {

struct SelftestResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestOptions {
  // Path to an RNG golden file (one %.17g value per line). Empty uses the
  // embedded copy of tests/data/rng_golden_seed42.txt.
  std::string rng_golden_path;
};

// Runs the full invariant suite at quick sizes. Every check is
// deterministic; the suite finishes well under a minute.
std::vector<SelftestResult> run_selftest(const SelftestOptions& opts = {});

bool all_passed(const std::vector<SelftestResult>& results);

}  // namespace fmd
