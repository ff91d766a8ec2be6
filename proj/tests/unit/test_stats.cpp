#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "ptr/stats.hpp"
#include "ptr/util.hpp"

using namespace ptr;
using namespace ptr::stats;

namespace {

// Independent recursive enumerator over sign assignments, used as the oracle
// for the exact method (the implementation iterates bitmasks instead).
void enumerate(const std::vector<double>& ranks, std::size_t i, double w, double w_obs,
               std::size_t& ge, std::size_t& total) {
    if (i == ranks.size()) {
        ++total;
        if (w >= w_obs - 1e-9) ++ge;
        return;
    }
    enumerate(ranks, i + 1, w, w_obs, ge, total);
    enumerate(ranks, i + 1, w + ranks[i], w_obs, ge, total);
}

double oracle_exact_greater(const std::vector<double>& diffs) {
    // Average ranks on |d| with zeros dropped, computed with a simple O(n^2)
    // counting rule rather than sorting.
    std::vector<double> absd;
    std::vector<int> signs;
    for (double d : diffs) {
        if (d != 0.0) {
            absd.push_back(std::abs(d));
            signs.push_back(d > 0 ? 1 : -1);
        }
    }
    const std::size_t n = absd.size();
    std::vector<double> ranks(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t below = 0;
        std::size_t equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (absd[j] < absd[i]) ++below;
            if (absd[j] == absd[i]) ++equal;
        }
        ranks[i] = static_cast<double>(below) +
                   (1.0 + static_cast<double>(equal)) / 2.0;  // average of the tied block
    }
    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (signs[i] > 0) w_plus += ranks[i];
    }
    std::size_t ge = 0;
    std::size_t total = 0;
    enumerate(ranks, 0, 0.0, w_plus, ge, total);
    return static_cast<double>(ge) / static_cast<double>(total);
}

PairedScores from_diffs(const std::vector<double>& diffs) {
    PairedScores p;
    for (double d : diffs) {
        p.weak.push_back(0.0);
        p.strong.push_back(d);
    }
    return p;
}

}  // namespace

TEST_CASE("wilcoxon [1,2,3] greater gives W+ = 6 and p = 1/8") {
    auto r = wilcoxon_signed_rank(from_diffs({1, 2, 3}), Alternative::greater);
    CHECK(r.n_effective == 3);
    CHECK(r.w_plus == 6.0);
    CHECK(r.w_minus == 0.0);
    CHECK(r.method == Method::exact);
    CHECK(r.p_value == 0.125);
}

TEST_CASE("wilcoxon degenerates to p = 1 when all differences are zero") {
    auto r = wilcoxon_signed_rank(from_diffs({0, 0, 0}), Alternative::greater);
    CHECK(r.n_effective == 0);
    CHECK(r.method == Method::exact);
    CHECK(r.p_value == 1.0);
    CHECK(r.w_plus == 0.0);
    CHECK(r.w_minus == 0.0);
}

TEST_CASE("wilcoxon validates inputs") {
    PairedScores bad;
    bad.weak = {1.0};
    bad.strong = {1.0, 2.0};
    CHECK_THROWS_AS(wilcoxon_signed_rank(bad), ContractError);
    CHECK_THROWS_AS(wilcoxon_signed_rank(PairedScores{}), ContractError);
}

TEST_CASE("tied case matches the externally verified reference") {
    // strong - weak = [0.5, -0.5, 1, 2, 0, 1, 0, 1]: n_eff 6, ranks
    // (1.5, 1.5, 4, 6, 4, 4), W+ = 19.5, exact greater p = 3/64.
    PairedScores p;
    p.strong = {5.5, 3.0, 4.0, 6.0, 2.0, 7.0, 4.5, 5.0};
    p.weak = {5.0, 3.5, 3.0, 4.0, 2.0, 6.0, 4.5, 4.0};
    auto r = wilcoxon_signed_rank(p, Alternative::greater);
    CHECK(r.n_effective == 6);
    CHECK(r.w_plus == 19.5);
    CHECK(r.w_minus == 1.5);
    CHECK(r.p_value == Catch::Approx(3.0 / 64.0).margin(1e-15));

    // Same data through the tie-corrected normal approximation:
    // mu = 10.5, sigma^2 = 22.75 - 30/48, z = 8.5 / sigma.
    auto approx = wilcoxon_signed_rank(p, Alternative::greater, Method::normal_approx);
    REQUIRE(approx.z.has_value());
    const double sigma = std::sqrt(6.0 * 7.0 * 13.0 / 24.0 - 30.0 / 48.0);
    CHECK(*approx.z == Catch::Approx(8.5 / sigma).margin(1e-12));
    CHECK(approx.p_value == Catch::Approx(0.03537493353818881).margin(1e-9));
}

TEST_CASE("rank sums always total n(n+1)/2") {
    Rng rng(71);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> diffs;
        const std::size_t n = 1 + rng.bounded(14);
        for (std::size_t j = 0; j < n; ++j) {
            diffs.push_back(static_cast<double>(static_cast<int>(rng.bounded(9)) - 4) / 2.0);
        }
        auto r = wilcoxon_signed_rank(from_diffs(diffs), Alternative::greater);
        const double ne = static_cast<double>(r.n_effective);
        CHECK(r.w_plus + r.w_minus == Catch::Approx(ne * (ne + 1.0) / 2.0).margin(1e-9));
    }
}

TEST_CASE("exact p agrees with the recursive enumeration oracle") {
    Rng rng(909);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> diffs;
        const std::size_t n = 1 + rng.bounded(10);
        bool any_nonzero = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(static_cast<int>(rng.bounded(11)) - 5);
            diffs.push_back(d);
            any_nonzero |= d != 0.0;
        }
        if (!any_nonzero) diffs.back() = 1.0;
        auto r = wilcoxon_signed_rank(from_diffs(diffs), Alternative::greater);
        REQUIRE(r.method == Method::exact);
        CHECK(r.p_value == Catch::Approx(oracle_exact_greater(diffs)).margin(1e-12));
    }
}

TEST_CASE("antisymmetry: swapping weak and strong swaps the rank sums") {
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        PairedScores p;
        const std::size_t n = 2 + rng.bounded(10);
        for (std::size_t j = 0; j < n; ++j) {
            p.weak.push_back(rng.uniform01() * 10.0);
            p.strong.push_back(rng.uniform01() * 10.0);
        }
        PairedScores swapped;
        swapped.weak = p.strong;
        swapped.strong = p.weak;
        auto a = wilcoxon_signed_rank(p, Alternative::greater);
        auto b = wilcoxon_signed_rank(swapped, Alternative::greater);
        CHECK(a.w_plus == Catch::Approx(b.w_minus).margin(1e-9));
        CHECK(a.w_minus == Catch::Approx(b.w_plus).margin(1e-9));
        // Complementary tails up to the discrete atom at the observed value:
        // P(W >= w) + P(W <= w) = 1 + P(W == w) >= 1.
        CHECK(a.p_value + b.p_value >= 1.0 - 1e-12);
    }
}

TEST_CASE("adding a positive constant to strong scores cannot decrease W+") {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        PairedScores p;
        const std::size_t n = 2 + rng.bounded(10);
        for (std::size_t j = 0; j < n; ++j) {
            p.weak.push_back(rng.uniform01() * 4.0);
            p.strong.push_back(rng.uniform01() * 4.0);
        }
        auto before = wilcoxon_signed_rank(p, Alternative::greater);
        PairedScores shifted = p;
        for (double& s : shifted.strong) s += 0.75;
        auto after = wilcoxon_signed_rank(shifted, Alternative::greater);
        CHECK(after.w_plus >= before.w_plus - 1e-9);
    }
}

TEST_CASE("normal approximation tracks the exact p at n = 12 without ties") {
    Rng rng(23);
    for (int i = 0; i < 30; ++i) {
        // Distinct |d| values guarantee no ties.
        std::vector<double> diffs;
        for (int j = 1; j <= 12; ++j) {
            diffs.push_back((rng.bounded(2) ? 1.0 : -1.0) * (j + 0.1 * rng.uniform01()));
        }
        auto exact = wilcoxon_signed_rank(from_diffs(diffs), Alternative::greater, Method::exact);
        auto approx =
            wilcoxon_signed_rank(from_diffs(diffs), Alternative::greater, Method::normal_approx);
        CHECK(std::abs(exact.p_value - approx.p_value) <= 0.01);
    }
}

TEST_CASE("two-sided p values stay in range and dominate the one-sided tail") {
    Rng rng(29);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> diffs;
        const std::size_t n = 1 + rng.bounded(9);
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(static_cast<int>(rng.bounded(7)) - 3);
            diffs.push_back(d);
            any |= d != 0.0;
        }
        if (!any) diffs.back() = 2.0;
        auto two = wilcoxon_signed_rank(from_diffs(diffs), Alternative::two_sided);
        CHECK(two.p_value >= 0.0);
        CHECK(two.p_value <= 1.0);
    }
}
