#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tmlecom {

/// Product of one or more columns; a single factor is a main effect.
struct Term {
    std::vector<std::string> factors;

    std::string name() const;
    bool operator==(const Term&) const = default;
};

/// `y ~ a + b + a*c`: intercept implicit, `*` expands to both main effects
/// plus their product, `:` is the bare product.
struct Formula {
    std::string outcome;
    std::vector<Term> terms;
    bool intercept = true;

    static Formula parse(std::string_view text);
    /// Main-effects formula `outcome ~ p1 + p2 + ...`.
    static Formula main_terms(std::string outcome, const std::vector<std::string>& predictors);

    /// Distinct column names referenced on the right-hand side, first-use order.
    std::vector<std::string> columns() const;
    std::string str() const;
    bool operator==(const Formula&) const = default;
};

}  // namespace tmlecom
