#include <chrono>
#include <sstream>

#include "../support/grad_suite.hpp"
#include "registry.hpp"

namespace {

constexpr std::uint64_t kSeeds = 5;
constexpr double kBudgetSeconds = 300;

acceptance::Outcome run() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = grad_suite::all_cases();
    std::size_t checks = 0, failures = 0;
    double worst_prim = 0, worst_comp = 0;
    std::ostringstream bad;
    for (const auto& c : cases) {
        for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
            const auto r = c.run(seed);
            ++checks;
            (c.primitive ? worst_prim : worst_comp) = std::max(c.primitive ? worst_prim : worst_comp, r.max_rel);
            if (!r.passed || r.checked == 0) {
                ++failures;
                bad << ' ' << c.name << "@" << seed << "(" << r.max_rel << ")";
            }
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << cases.size() << " ops x " << kSeeds << " seeds, " << failures << " failed; worst rel dev primitive "
       << worst_prim << " (tol " << grad_suite::kPrimitiveTol << "), composite " << worst_comp << " (tol "
       << grad_suite::kCompositeTol << "); " << secs << " s of " << kBudgetSeconds << " s budget" << bad.str();
    return {failures == 0 && secs < kBudgetSeconds, os.str()};
}

const acceptance::Register reg("gradient_suite", "finite-difference gradients of every primitive and composite", run);

}  // namespace
