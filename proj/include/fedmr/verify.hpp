#pragma once

// Property-verification battery: identities, gradient checks and bound
// simulations that must hold on every build.

#include <cstdint>
#include <string>
#include <vector>

namespace fedmr {

struct VerifyOptions {
  std::uint64_t seed = 7;
  // Fault injection: disables the standard-deviation floor.
  bool remove_std_floor = false;
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<PropertyResult> run_verification(const VerifyOptions& opts = {});

}  // namespace fedmr
