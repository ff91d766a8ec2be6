#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ptr::text {

inline char lower_ascii(char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string to_lower(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(lower_ascii(c));
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

// Whitespace-split tokens, verbatim (no case folding).
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        const std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        if (i > start) tokens.emplace_back(s.substr(start, i - start));
    }
    return tokens;
}

// The one normalization rule shared by dedupe, leakage screening and
// consistency scoring: lowercase + whitespace tokenization.
inline std::vector<std::string> normalized_tokens(std::string_view s) {
    return tokenize(to_lower(s));
}

// Lowercased, single-spaced, trimmed rendering of the same token stream.
inline std::string normalize(std::string_view s) {
    const auto tokens = normalized_tokens(s);
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

using NgramSet = std::unordered_set<std::string>;

// Distinct word n-grams, space-joined. Fewer than n tokens -> empty set.
inline NgramSet word_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramSet grams;
    if (n == 0 || tokens.size() < n) return grams;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            g.push_back(' ');
            g += tokens[i + j];
        }
        grams.insert(std::move(g));
    }
    return grams;
}

inline NgramSet word_ngrams(std::string_view s, std::size_t n) {
    return word_ngrams(normalized_tokens(s), n);
}

// Jaccard index over distinct n-gram sets. Two empty sets count as identical
// (1); exactly one empty set counts as fully disjoint (0).
inline double jaccard(const NgramSet& a, const NgramSet& b) {
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    const NgramSet& small = a.size() <= b.size() ? a : b;
    const NgramSet& large = a.size() <= b.size() ? b : a;
    std::size_t inter = 0;
    for (const auto& g : small) {
        if (large.count(g)) ++inter;
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double ngram_jaccard(std::string_view a, std::string_view b, std::size_t n) {
    return jaccard(word_ngrams(a, n), word_ngrams(b, n));
}

}  // namespace ptr::text
