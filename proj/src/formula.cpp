#include "tmlecom/formula.hpp"

#include <algorithm>
#include <cctype>

#include "tmlecom/error.hpp"

namespace tmlecom {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

void push_unique(std::vector<Term>& terms, Term t) {
    if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(std::move(t));
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    });
}

}  // namespace

std::string Term::name() const {
    std::string out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (i) out += ':';
        out += factors[i];
    }
    return out;
}

Formula Formula::parse(std::string_view text) {
    const auto tilde = text.find('~');
    if (tilde == std::string_view::npos) {
        throw ConfigError("formula '" + std::string(text) + "' has no '~'");
    }
    Formula f;
    f.outcome = trim(text.substr(0, tilde));
    if (!valid_name(f.outcome)) throw ConfigError("bad outcome in formula '" + std::string(text) + "'");

    std::string rhs = trim(text.substr(tilde + 1));
    // "- 1" drops the intercept.
    for (const char* pat : {"-1", "- 1", "+0", "+ 0"}) {
        auto pos = rhs.find(pat);
        if (pos != std::string::npos) {
            f.intercept = false;
            rhs.erase(pos, std::string(pat).size());
        }
    }
    rhs = trim(rhs);
    if (rhs == "0") {
        f.intercept = false;
        return f;
    }
    if (rhs.empty() || rhs == "1") return f;

    for (const auto& piece : split(rhs, '+')) {
        if (piece.empty()) throw ConfigError("empty term in formula '" + std::string(text) + "'");
        if (piece == "1") continue;
        if (piece.find('*') != std::string::npos) {
            auto factors = split(piece, '*');
            for (const auto& fac : factors) {
                if (!valid_name(fac)) throw ConfigError("bad term '" + piece + "'");
                push_unique(f.terms, Term{{fac}});
            }
            // all pairwise products, then higher orders up to the full product
            const std::size_t k = factors.size();
            for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
                if (__builtin_popcountll(mask) < 2) continue;
                Term t;
                for (std::size_t i = 0; i < k; ++i) {
                    if (mask & (std::size_t{1} << i)) t.factors.push_back(factors[i]);
                }
                push_unique(f.terms, std::move(t));
            }
        } else if (piece.find(':') != std::string::npos) {
            Term t{split(piece, ':')};
            for (const auto& fac : t.factors) {
                if (!valid_name(fac)) throw ConfigError("bad term '" + piece + "'");
            }
            push_unique(f.terms, std::move(t));
        } else {
            if (!valid_name(piece)) throw ConfigError("bad term '" + piece + "'");
            push_unique(f.terms, Term{{piece}});
        }
    }
    return f;
}

Formula Formula::main_terms(std::string outcome, const std::vector<std::string>& predictors) {
    Formula f;
    f.outcome = std::move(outcome);
    for (const auto& p : predictors) push_unique(f.terms, Term{{p}});
    return f;
}

std::vector<std::string> Formula::columns() const {
    std::vector<std::string> out;
    for (const auto& t : terms) {
        for (const auto& fac : t.factors) {
            if (std::find(out.begin(), out.end(), fac) == out.end()) out.push_back(fac);
        }
    }
    return out;
}

std::string Formula::str() const {
    std::string out = outcome + " ~ ";
    if (terms.empty()) return out + (intercept ? "1" : "0");
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += " + ";
        out += terms[i].name();
    }
    if (!intercept) out += " - 1";
    return out;
}

}  // namespace tmlecom
