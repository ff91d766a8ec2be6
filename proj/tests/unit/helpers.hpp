#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "ptr/corpus.hpp"
#include "ptr/generation.hpp"
#include "ptr/provider.hpp"
#include "ptr/util.hpp"

namespace testutil {

inline ptr::corpus::Query make_query(const std::string& id, const std::string& text) {
    ptr::corpus::Query q;
    q.id = id;
    q.text = text;
    q.source = "test";
    return q;
}

inline ptr::generation::ThoughtSequence make_thoughts(const std::string& query_id,
                                                      const std::vector<std::string>& texts) {
    ptr::generation::ThoughtSequence s;
    s.query_id = query_id;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        s.thoughts.push_back({texts[i], static_cast<int>(i) + 1, "test-endpoint", query_id});
    }
    return s;
}

inline ptr::generation::RefinedAnswer make_answer(const std::string& text) {
    ptr::generation::RefinedAnswer a;
    a.text = text;
    a.producer = "test-strong";
    a.icl_prompt = "prompt";
    return a;
}

inline ptr::provider::ModelEndpoint mock_endpoint(ptr::provider::Role role, std::uint64_t seed,
                                                  const std::string& name = "m") {
    ptr::provider::ModelEndpoint e;
    e.role = role;
    e.base_url = "mock:" + std::to_string(seed);
    e.model_name = name;
    return e;
}

// Random word string from a closed vocabulary; shared-token overlap between
// draws is common, which keeps similarity scores nontrivial.
inline std::string random_token_string(ptr::Rng& rng, std::size_t max_tokens,
                                       std::size_t vocab_size = 40) {
    static const char* const words[] = {
        "apple", "brick", "cloud", "delta", "eagle", "frost", "grape", "house", "igloo", "joker",
        "knife", "lemon", "mango", "night", "ocean", "piano", "queen", "river", "stone", "tiger",
        "umbra", "vigor", "whale", "xerox", "yacht", "zebra", "amber", "blaze", "coral", "dusk",
        "ember", "flare", "gleam", "haze",  "ivory", "jade",  "kelp",  "lotus", "moss",  "nova",
    };
    const std::size_t vocab = std::min<std::size_t>(vocab_size, std::size(words));
    const std::size_t n = 1 + rng.bounded(max_tokens);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out.push_back(' ');
        out += words[rng.bounded(vocab)];
    }
    return out;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("ptrkit_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }

    std::filesystem::path path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
