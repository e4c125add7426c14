#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fidgp {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Fast oracle battery: factorization round-trips, spectral norms against
/// the Jacobi eigensolver, closed-form KLs against Monte Carlo, flow
/// inverse/log-det consistency, sampler moments, and metric hand values.
std::vector<CheckResult> run_selfcheck(std::uint64_t seed);

}  // namespace fidgp
