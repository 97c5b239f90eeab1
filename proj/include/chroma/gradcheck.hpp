// Self-contained finite-difference audit of the reverse-mode gradients.
// Each suite draws random small problems, compares every input coordinate
// of the analytic gradient against central differences, and reports the
// worst relative error seen.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace chroma {

struct GradcheckReport {
    int checks = 0;    // distinct operations exercised
    int trials = 0;    // random problems evaluated (retries not counted)
    int failures = 0;  // trials whose error stayed above tolerance on retry
    double worst_rel = 0.0;
    std::vector<std::string> failure_notes;

    bool passed() const { return failures == 0 && trials > 0; }
};

// suite: "conv" (network building blocks), "losses", "mdn", or "all".
// `trials` random problems per operation; tolerance is 1e-4 relative. A
// trial that trips the tolerance is retried once with fresh draws so a
// rectifier kink or argmin tie cannot fail a healthy build, then counted
// as a failure if it still exceeds it. One summary line per operation goes
// to `log`.
GradcheckReport gradcheck(const std::string& suite, int trials, std::uint64_t seed,
                          std::ostream* log = nullptr);

}  // namespace chroma
