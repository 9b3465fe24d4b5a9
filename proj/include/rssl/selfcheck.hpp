#pragma once

#include "rssl/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rssl {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelfCheckReport {
    std::vector<SuiteResult> suites;
    double max_gradient_rel_error = 0.0;

    [[nodiscard]] bool passed() const;
};

/// Largest entrywise relative error between the tape gradient of `build`
/// at x and central finite differences (step h). Entries where both values
/// are at most `floor` in magnitude are skipped.
double gradient_rel_error(const std::function<ad::Var(ad::Graph&, ad::Var)>& build, const Matrix& x,
                          double h = 1e-5, double floor = 1e-8);

/// gradient-check, determinant-lemma, pgd-closed-form and accounting suites.
SelfCheckReport run_selfcheck(std::uint64_t seed = 0);

} // namespace rssl
