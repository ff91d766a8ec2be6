#pragma once

#include <cmath>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptr/generation.hpp"
#include "ptr/provider.hpp"
#include "ptr/text.hpp"
#include "ptr/util.hpp"

namespace ptr::consistency {

struct ConsistencyConfig {
    double alpha1 = 0.3;   // n-gram similarity weight
    double alpha2 = 0.7;   // embedding similarity weight
    int ngram_order = 2;
    double delta = 0.5;    // per-thought threshold
    double kappa = 0.5;    // sequence keep-threshold

    void validate() const {
        if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("alpha weights must be >= 0");
        if (std::abs(alpha1 + alpha2 - 1.0) > 1e-9) throw ConfigError("alpha1 + alpha2 must equal 1");
        if (ngram_order < 1) throw ConfigError("ngram_order must be >= 1");
        if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
        if (kappa < 0.0 || kappa > 1.0) throw ConfigError("kappa must be in [0,1]");
    }
};

// Memoizing wrapper around the embedding endpoint, keyed by exact text.
// Thread-safe; caching never changes values, only call counts.
class Embedder {
public:
    Embedder(provider::Client& client, provider::ModelEndpoint endpoint)
        : client_(client), endpoint_(std::move(endpoint)) {}

    provider::EmbeddingVector get(const std::string& text) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(text);
            if (it != cache_.end()) return it->second;
        }
        provider::EmbeddingVector v = client_.embed(endpoint_, text);
        std::lock_guard<std::mutex> lock(mutex_);
        return cache_.emplace(text, std::move(v)).first->second;
    }

    const provider::ModelEndpoint& endpoint() const { return endpoint_; }

private:
    provider::Client& client_;
    provider::ModelEndpoint endpoint_;
    std::mutex mutex_;
    std::unordered_map<std::string, provider::EmbeddingVector> cache_;
};

// Jaccard over distinct word n-grams (lowercase whitespace tokens).
inline double ngram_sim(const std::string& a, const std::string& b, int n) {
    if (n < 1) throw ConfigError("ngram order must be >= 1");
    return text::ngram_jaccard(a, b, static_cast<std::size_t>(n));
}

// Cosine mapped affinely onto [0,1] so nonnegative weights keep the combined
// score in range.
inline double embed_sim(const std::string& a, const std::string& b, Embedder& embedder) {
    const double c = provider::cosine(embedder.get(a), embedder.get(b));
    double mapped = (1.0 + c) / 2.0;
    if (mapped < 0.0) mapped = 0.0;
    if (mapped > 1.0) mapped = 1.0;
    return mapped;
}

// The weighted combination itself, factored out so the arithmetic can be
// checked against hand-computed component values.
inline double combine(double ngram_value, double embed_value, const ConsistencyConfig& cfg) {
    return cfg.alpha1 * ngram_value + cfg.alpha2 * embed_value;
}

// F_cons: alpha1 * n-gram Jaccard + alpha2 * embedding similarity. Skips the
// embedding call entirely when alpha2 == 0.
inline double f_cons(const std::string& a, const std::string& b, const ConsistencyConfig& cfg,
                     Embedder& embedder) {
    cfg.validate();
    const double ng = ngram_sim(a, b, cfg.ngram_order);
    if (cfg.alpha2 == 0.0) return combine(ng, 0.0, cfg);
    return combine(ng, embed_sim(a, b, embedder), cfg);
}

struct ConsistencyScore {
    std::vector<double> per_thought;  // F_cons(thought_j, final), j in order
    double c_value = 0.0;             // mean of indicators per_thought[j] >= delta
    bool kept = false;                // c_value >= kappa
};

// Recomputes C from per-thought values; also the audit-trail oracle used to
// re-verify emitted scores.
inline double c_from_per_thought(const std::vector<double>& per_thought, double delta) {
    if (per_thought.empty()) throw ContractError("per_thought values are empty");
    std::size_t hits = 0;
    for (double v : per_thought) {
        if (v >= delta) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(per_thought.size());
}

inline ConsistencyScore seq_consistency(const generation::ThoughtSequence& s,
                                        const generation::RefinedAnswer& final_answer,
                                        const ConsistencyConfig& cfg, Embedder& embedder) {
    cfg.validate();
    s.validate();
    ConsistencyScore score;
    score.per_thought.reserve(s.thoughts.size());
    for (const auto& t : s.thoughts) {
        score.per_thought.push_back(f_cons(t.text, final_answer.text, cfg, embedder));
    }
    score.c_value = c_from_per_thought(score.per_thought, cfg.delta);
    score.kept = score.c_value >= cfg.kappa;
    return score;
}

struct ScoredCandidate {
    generation::Candidate candidate;
    ConsistencyScore score;
};

struct FilterResult {
    std::vector<ScoredCandidate> kept;
    std::vector<ScoredCandidate> dropped;  // scores attached for audit
};

// Partitions candidates by the sequence keep rule. kept + dropped is exactly
// the input, in input order within each side.
inline FilterResult filter_samples(const std::vector<generation::Candidate>& samples,
                                   const ConsistencyConfig& cfg, Embedder& embedder) {
    cfg.validate();
    FilterResult result;
    for (const auto& sample : samples) {
        ScoredCandidate scored{sample, seq_consistency(sample.thoughts, sample.answer, cfg, embedder)};
        (scored.score.kept ? result.kept : result.dropped).push_back(std::move(scored));
    }
    return result;
}

}  // namespace ptr::consistency
