#pragma once

// Built-in checks behind `ltfl verify`: small, fast versions of the exact
// properties the acceptance suite runs at full size.

#include <cstdint>
#include <string>
#include <vector>

namespace ltfl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Analytic vs. central-difference gradients (h = 1e-5) on random small MLPs
/// and CNNs with random masks and L1; passes when every network's relative
/// error ||a - n|| / (||a|| + ||n||) is at most 1e-3.
CheckResult check_gradients(std::size_t networks, std::uint64_t seed);

/// aggregate_ltns against a per-scalar loop over unit ownership.
CheckResult check_aggregation(std::size_t instances, std::uint64_t seed);

/// Similarity symmetry / identity / complement, extraction counts, nested rates.
CheckResult check_mask_algebra(std::size_t instances, std::uint64_t seed);

/// Two identical ticket draws give identical masks and weights.
CheckResult check_determinism(std::uint64_t seed);

std::vector<CheckResult> run_selfcheck(std::uint64_t seed);

}  // namespace ltfl
