#pragma once

#include <cstddef>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "ptr/text.hpp"
#include "ptr/util.hpp"

namespace ptr::corpus {

struct RawRecord {
    std::string id;
    std::string text;
    std::optional<std::string> answer;
    std::string source;
};

// A cleaned query: no URLs, no image markup, no HTML tags, no control
// characters other than newline, space runs collapsed, ends trimmed.
struct Query {
    std::string id;
    std::string text;
    std::optional<std::string> sft_answer;
    std::string source;
};

enum class CleanRejection {
    none,
    empty_after_clean,
    below_min_length,
};

inline const char* to_string(CleanRejection r) {
    switch (r) {
        case CleanRejection::none: return "none";
        case CleanRejection::empty_after_clean: return "empty_after_clean";
        case CleanRejection::below_min_length: return "below_min_length";
    }
    return "none";
}

struct CleaningRules {
    std::size_t min_tokens = 3;
};

struct CleanOutcome {
    std::optional<Query> query;
    CleanRejection rejection = CleanRejection::none;
};

namespace detail {

inline std::string strip_noise_once(const std::string& s) {
    static const std::regex md_image(R"(!\[[^\]]*\]\([^)]*\))");
    static const std::regex html_tag(R"(<[^<>]*>)");
    static const std::regex url(R"((https?|ftp)://[^ \t\r\n\f\v]+)");
    std::string out = std::regex_replace(s, md_image, "");
    out = std::regex_replace(out, html_tag, "");
    out = std::regex_replace(out, url, "");
    return out;
}

}  // namespace detail

// The cleaning transform itself, exposed separately so idempotence can be
// checked directly: clean_text(clean_text(x)) == clean_text(x).
inline std::string clean_text(const std::string& raw) {
    // Stripping one pattern can uncover another ("a<b>http://x</b>"), so
    // iterate to a fixpoint. Bounded: each pass only deletes characters.
    std::string s = raw;
    for (int pass = 0; pass < 16; ++pass) {
        std::string next = detail::strip_noise_once(s);
        if (next == s) break;
        s = std::move(next);
    }
    // Control characters other than newline become spaces.
    for (char& c : s) {
        const unsigned char u = static_cast<unsigned char>(c);
        if ((u < 0x20 && c != '\n') || u == 0x7f) c = ' ';
    }
    // Collapse runs of spaces (newlines are preserved as-is).
    std::string collapsed;
    collapsed.reserve(s.size());
    for (char c : s) {
        if (c == ' ' && !collapsed.empty() && collapsed.back() == ' ') continue;
        collapsed.push_back(c);
    }
    return text::trim(collapsed);
}

inline CleanOutcome clean_record(const RawRecord& raw, const CleaningRules& rules = {}) {
    CleanOutcome out;
    std::string cleaned = clean_text(raw.text);
    if (cleaned.empty()) {
        out.rejection = CleanRejection::empty_after_clean;
        return out;
    }
    if (text::tokenize(cleaned).size() < rules.min_tokens) {
        out.rejection = CleanRejection::below_min_length;
        return out;
    }
    Query q;
    q.id = raw.id;
    q.text = std::move(cleaned);
    q.source = raw.source;
    if (raw.answer) {
        std::string ans = clean_text(*raw.answer);
        if (!ans.empty()) q.sft_answer = std::move(ans);
    }
    out.query = std::move(q);
    return out;
}

struct DedupeResult {
    std::vector<Query> kept;
    std::size_t dropped = 0;
};

// Drops exact normalized duplicates and near-duplicates by word-3-gram
// Jaccard >= threshold. First occurrence wins. An inverted gram index keeps
// comparisons limited to kept queries that share at least one gram; queries
// with empty gram sets (possible only under permissive min-length rules)
// still compare against each other, since two empty sets count as identical.
inline DedupeResult dedupe(const std::vector<Query>& queries, double near_dup_threshold) {
    if (near_dup_threshold < 0.0 || near_dup_threshold > 1.0) {
        throw ConfigError("near_dup_threshold must be in [0,1]");
    }
    DedupeResult result;
    if (near_dup_threshold == 0.0) {
        // Every pair clears a zero threshold, so only the first survives.
        if (!queries.empty()) {
            result.kept.push_back(queries.front());
            result.dropped = queries.size() - 1;
        }
        return result;
    }
    std::unordered_set<std::string> seen_normalized;
    std::vector<text::NgramSet> kept_grams;
    std::unordered_map<std::string, std::vector<std::size_t>> gram_index;
    std::vector<std::size_t> empty_gram_kept;
    for (const auto& q : queries) {
        const std::string norm = text::normalize(q.text);
        if (seen_normalized.count(norm)) {
            ++result.dropped;
            continue;
        }
        text::NgramSet grams = text::word_ngrams(q.text, 3);
        std::unordered_set<std::size_t> candidates;
        if (grams.empty()) {
            candidates.insert(empty_gram_kept.begin(), empty_gram_kept.end());
        } else {
            for (const auto& g : grams) {
                auto it = gram_index.find(g);
                if (it == gram_index.end()) continue;
                candidates.insert(it->second.begin(), it->second.end());
            }
        }
        bool near_dup = false;
        for (std::size_t idx : candidates) {
            if (text::jaccard(grams, kept_grams[idx]) >= near_dup_threshold) {
                near_dup = true;
                break;
            }
        }
        if (near_dup) {
            ++result.dropped;
            continue;
        }
        seen_normalized.insert(norm);
        const std::size_t idx = kept_grams.size();
        if (grams.empty()) {
            empty_gram_kept.push_back(idx);
        } else {
            for (const auto& g : grams) gram_index[g].push_back(idx);
        }
        kept_grams.push_back(std::move(grams));
        result.kept.push_back(q);
    }
    return result;
}

inline constexpr const char* kNormalizationRule = "lowercase_whitespace";

struct LeakageEntry {
    std::string normalized;  // nonempty
    text::NgramSet ngrams;   // may be empty for very short eval queries
};

struct LeakageIndex {
    std::vector<LeakageEntry> entries;
    std::string normalization = kNormalizationRule;
};

// One entry per evaluation query (duplicates retained; harmless).
inline LeakageIndex build_leakage_index(const std::vector<std::string>& eval_queries) {
    LeakageIndex index;
    index.entries.reserve(eval_queries.size());
    for (const auto& e : eval_queries) {
        LeakageEntry entry;
        entry.normalized = text::normalize(e);
        if (entry.normalized.empty()) continue;
        entry.ngrams = text::word_ngrams(e, 3);
        index.entries.push_back(std::move(entry));
    }
    return index;
}

struct LeakageResult {
    std::vector<Query> kept;
    std::vector<Query> removed;
};

// A query leaks iff some eval entry has 3-gram Jaccard >= threshold with it,
// or the eval text is a substring of the query (both normalized).
inline LeakageResult filter_leakage(const std::vector<Query>& queries, const LeakageIndex& index,
                                    double threshold) {
    if (threshold <= 0.0 || threshold > 1.0) {
        throw ConfigError("leakage threshold must be in (0,1]");
    }
    LeakageResult result;
    for (const auto& q : queries) {
        const std::string norm = text::normalize(q.text);
        const text::NgramSet grams = text::word_ngrams(q.text, 3);
        bool leaked = false;
        for (const auto& entry : index.entries) {
            if (text::jaccard(grams, entry.ngrams) >= threshold ||
                norm.find(entry.normalized) != std::string::npos) {
                leaked = true;
                break;
            }
        }
        (leaked ? result.removed : result.kept).push_back(q);
    }
    return result;
}

enum class MixRole { ptr, sft };

struct MixedItem {
    MixRole role;
    Query query;
};

// Interleaves SFT pairs into the PTR queries so that the SFT fraction of the
// output lands within one item of round(ratio * total). Both subsequences
// keep their input order; slot positions are a seeded shuffle. SFT pairs are
// cycled when the pool is smaller than the target count.
inline std::vector<MixedItem> mix_sft(const std::vector<Query>& ptr_queries,
                                      const std::vector<Query>& sft_pairs, double ratio,
                                      std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("sft ratio must be in [0,1]");
    if (ratio > 0.0 && sft_pairs.empty()) {
        throw ContractError("sft ratio > 0 but no sft pairs were provided");
    }
    std::vector<MixedItem> out;
    if (ratio == 0.0) {
        for (const auto& q : ptr_queries) out.push_back({MixRole::ptr, q});
        return out;
    }
    if (ratio == 1.0) {
        for (const auto& q : sft_pairs) out.push_back({MixRole::sft, q});
        return out;
    }
    const std::size_t n_ptr = ptr_queries.size();
    const std::size_t n_sft =
        static_cast<std::size_t>(ratio / (1.0 - ratio) * static_cast<double>(n_ptr) + 0.5);
    std::vector<bool> is_sft(n_ptr + n_sft, false);
    for (std::size_t i = n_ptr; i < is_sft.size(); ++i) is_sft[i] = true;
    Rng rng(mix64(seed, 0x5f7u));
    for (std::size_t i = is_sft.size(); i > 1; --i) {
        const std::size_t j = rng.bounded(i);
        std::swap(is_sft[i - 1], is_sft[j]);
    }
    std::size_t next_ptr = 0;
    std::size_t next_sft = 0;
    out.reserve(is_sft.size());
    for (bool sft : is_sft) {
        if (sft) {
            out.push_back({MixRole::sft, sft_pairs[next_sft % sft_pairs.size()]});
            ++next_sft;
        } else {
            out.push_back({MixRole::ptr, ptr_queries[next_ptr++]});
        }
    }
    return out;
}

struct CleanReport {
    std::size_t kept = 0;
    std::size_t rejected_empty = 0;
    std::size_t rejected_noise = 0;
    std::size_t deduped = 0;
    std::size_t leaked = 0;

    std::size_t total() const { return kept + rejected_empty + rejected_noise + deduped + leaked; }
};

struct CleanBatchResult {
    std::vector<Query> queries;
    CleanReport report;
};

// Whole-corpus pass: per-record cleaning, dedupe, leakage screen. The report
// counts partition the input: kept + rejected + deduped + leaked == input.
inline CleanBatchResult clean_batch(const std::vector<RawRecord>& records,
                                    const CleaningRules& rules, double near_dup_threshold,
                                    const LeakageIndex* leakage_index = nullptr,
                                    double leakage_threshold = 0.5) {
    CleanBatchResult out;
    std::vector<Query> cleaned;
    for (const auto& rec : records) {
        CleanOutcome o = clean_record(rec, rules);
        if (o.query) {
            cleaned.push_back(std::move(*o.query));
        } else if (o.rejection == CleanRejection::empty_after_clean) {
            ++out.report.rejected_empty;
        } else {
            ++out.report.rejected_noise;
        }
    }
    DedupeResult dd = dedupe(cleaned, near_dup_threshold);
    out.report.deduped = dd.dropped;
    if (leakage_index && !leakage_index->entries.empty()) {
        LeakageResult lr = filter_leakage(dd.kept, *leakage_index, leakage_threshold);
        out.report.leaked = lr.removed.size();
        out.queries = std::move(lr.kept);
    } else {
        out.queries = std::move(dd.kept);
    }
    out.report.kept = out.queries.size();
    return out;
}

}  // namespace ptr::corpus
