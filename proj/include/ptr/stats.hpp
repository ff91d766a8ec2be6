#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptr/util.hpp"

namespace ptr::stats {

// Quality scores paired by item.
struct PairedScores {
    std::vector<double> weak;
    std::vector<double> strong;

    void validate() const {
        if (weak.size() != strong.size()) throw ContractError("paired score lists differ in length");
        if (weak.empty()) throw ContractError("paired score lists are empty");
    }
};

enum class Alternative { two_sided, greater };
enum class Method { exact, normal_approx };

inline const char* to_string(Alternative a) {
    return a == Alternative::two_sided ? "two_sided" : "greater";
}

inline const char* to_string(Method m) {
    return m == Method::exact ? "exact" : "normal_approx";
}

struct WilcoxonResult {
    std::size_t n_effective = 0;  // pairs after dropping zero differences
    double w_plus = 0.0;
    double w_minus = 0.0;
    std::optional<double> z;  // only for the normal approximation
    double p_value = 1.0;
    Method method = Method::exact;
    Alternative alternative = Alternative::greater;
};

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

namespace detail {

// Signed ranks of the nonzero differences; ties on |d| get average ranks.
struct RankedDiffs {
    std::vector<double> ranks;  // rank of |d_i|
    std::vector<int> signs;     // +1 / -1
    double tie_term = 0.0;      // sum of (t^3 - t) over tie groups
};

inline RankedDiffs rank_differences(const std::vector<double>& diffs) {
    RankedDiffs out;
    std::vector<double> absd;
    for (double d : diffs) {
        if (d == 0.0) continue;
        absd.push_back(std::abs(d));
        out.signs.push_back(d > 0.0 ? 1 : -1);
    }
    const std::size_t n = absd.size();
    out.ranks.assign(n, 0.0);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return absd[a] < absd[b]; });
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && absd[order[j]] == absd[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) out.ranks[order[k]] = avg_rank;
        const double t = static_cast<double>(j - i);
        out.tie_term += t * t * t - t;
        i = j;
    }
    return out;
}

// Exact tail probabilities by enumerating every sign assignment.
inline void exact_tails(const std::vector<double>& ranks, double w_obs, double& p_ge,
                        double& p_le) {
    const std::size_t n = ranks.size();
    const std::uint64_t total = 1ull << n;
    std::uint64_t count_ge = 0;
    std::uint64_t count_le = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1ull << i)) w += ranks[i];
        }
        if (w >= w_obs - 1e-9) ++count_ge;
        if (w <= w_obs + 1e-9) ++count_le;
    }
    p_ge = static_cast<double>(count_ge) / static_cast<double>(total);
    p_le = static_cast<double>(count_le) / static_cast<double>(total);
}

}  // namespace detail

// Wilcoxon signed-rank test of strong vs weak scores. Zero differences are
// dropped; ties on |d| receive average ranks. Exact enumeration up to
// n_eff <= 12, normal approximation (tie-corrected sigma, 0.5 continuity
// correction) above; `force` overrides the cutoff.
inline WilcoxonResult wilcoxon_signed_rank(const PairedScores& pairs,
                                           Alternative alternative = Alternative::greater,
                                           std::optional<Method> force = std::nullopt) {
    pairs.validate();
    std::vector<double> diffs(pairs.weak.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = pairs.strong[i] - pairs.weak[i];

    WilcoxonResult result;
    result.alternative = alternative;
    const detail::RankedDiffs ranked = detail::rank_differences(diffs);
    result.n_effective = ranked.ranks.size();
    for (std::size_t i = 0; i < ranked.ranks.size(); ++i) {
        if (ranked.signs[i] > 0) {
            result.w_plus += ranked.ranks[i];
        } else {
            result.w_minus += ranked.ranks[i];
        }
    }
    if (result.n_effective == 0) {
        result.method = Method::exact;
        result.p_value = 1.0;
        return result;
    }

    const std::size_t n = result.n_effective;
    const bool use_exact = force ? *force == Method::exact : n <= 12;
    if (use_exact && n > 25) {
        throw ContractError("exact method forced for n_eff = " + std::to_string(n) +
                            "; enumeration is limited to n_eff <= 25");
    }
    if (use_exact) {
        result.method = Method::exact;
        double p_ge = 0.0;
        double p_le = 0.0;
        detail::exact_tails(ranked.ranks, result.w_plus, p_ge, p_le);
        if (alternative == Alternative::greater) {
            result.p_value = p_ge;
        } else {
            result.p_value = std::min(1.0, 2.0 * std::min(p_ge, p_le));
        }
        return result;
    }

    result.method = Method::normal_approx;
    const double nd = static_cast<double>(n);
    const double mu = nd * (nd + 1.0) / 4.0;
    const double sigma2 = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - ranked.tie_term / 48.0;
    if (sigma2 <= 0.0) {
        result.z = 0.0;
        result.p_value = 1.0;
        return result;
    }
    const double sigma = std::sqrt(sigma2);
    if (alternative == Alternative::greater) {
        const double z = (result.w_plus - mu - 0.5) / sigma;
        result.z = z;
        result.p_value = 1.0 - normal_cdf(z);
    } else {
        const double z = (std::max(0.0, std::abs(result.w_plus - mu) - 0.5)) / sigma;
        result.z = z;
        result.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    }
    return result;
}

}  // namespace ptr::stats
