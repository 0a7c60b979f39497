#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bdray {

struct CheckResult {
    std::string criterion;  // "1".."8"
    std::string name;
    bool pass = false;
    double value = 0.0;   // measured residual / gap
    double bound = 0.0;   // tolerance it is held against
    double wall_ms = 0.0;
    std::string detail;
};

struct CheckOptions {
    int jobs = 0;                     // Monte Carlo workers (0 = min(8, hardware))
    std::uint64_t mc_paths = 100000;  // paths per Monte Carlo mode
    bool skip_monte_carlo = false;    // for quick verification runs
};

// Reference rate families used throughout the verification suite.
struct ReferenceFamilies;

// Runs the whole property suite (acceptance criteria 1-8) and returns one
// result per named check, in criterion order.
std::vector<CheckResult> run_acceptance_checks(const CheckOptions& opts = {});

std::string format_check_line(const CheckResult& r);

}  // namespace bdray
