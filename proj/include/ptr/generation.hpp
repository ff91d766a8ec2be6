#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptr/corpus.hpp"
#include "ptr/provider.hpp"
#include "ptr/util.hpp"

namespace ptr::generation {

inline constexpr const char* kRefineInstruction = "Please continue thinking and refine your answer";

// One weak-model attempt.
struct Thought {
    std::string text;
    int attempt = 1;           // 1-based
    std::string producer;      // endpoint identity
    std::string raw_prompt;
};

// Attempts 1..T, contiguous.
struct ThoughtSequence {
    std::string query_id;
    std::vector<Thought> thoughts;

    void validate() const {
        if (thoughts.empty()) throw ContractError("thought sequence is empty");
        for (std::size_t i = 0; i < thoughts.size(); ++i) {
            if (thoughts[i].attempt != static_cast<int>(i) + 1) {
                throw ContractError("thought attempts must be contiguous from 1");
            }
            if (thoughts[i].text.empty()) throw ContractError("thought text is empty");
        }
    }
};

struct RefinedAnswer {
    std::string text;
    std::string producer;
    std::string icl_prompt;
};

struct IclTemplate {
    // Must contain {query} and {thoughts}; {instruction} is optional.
    std::string body;
    std::string instruction = kRefineInstruction;
};

inline IclTemplate default_icl_template() {
    IclTemplate t;
    t.body =
        "You will see a question and a sequence of prior draft thoughts. "
        "Produce a single improved final answer.\n\n"
        "Question: {query}\n\n"
        "{thoughts}"
        "Final answer:";
    return t;
}

namespace detail {

inline void replace_all(std::string& s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace detail

// Renders the strong-model prompt: the query once, then every thought in
// attempt order, each followed by the refinement instruction.
inline std::string assemble_icl_prompt(const corpus::Query& q, const ThoughtSequence& s,
                                       const IclTemplate& tmpl) {
    if (tmpl.body.find("{query}") == std::string::npos) {
        throw ConfigError("icl template is missing the {query} placeholder");
    }
    if (tmpl.body.find("{thoughts}") == std::string::npos) {
        throw ConfigError("icl template is missing the {thoughts} placeholder");
    }
    s.validate();
    std::string thoughts_block;
    for (const auto& t : s.thoughts) {
        thoughts_block += "Thought " + std::to_string(t.attempt) + ": " + t.text + "\n";
        thoughts_block += tmpl.instruction + "\n\n";
    }
    std::string out = tmpl.body;
    detail::replace_all(out, "{query}", q.text);
    detail::replace_all(out, "{thoughts}", thoughts_block);
    detail::replace_all(out, "{instruction}", tmpl.instruction);
    return out;
}

// Weak-model n-attempt thought generation. Attempt t goes to weak endpoint
// (t-1) mod |weak|. Attempts share the bare query as prompt; when sampling
// (temperature > 0) each attempt derives its own sampling seed from the base
// seed so reruns stay bit-reproducible while attempts differ. A failed
// attempt aborts the whole sequence; partial sequences are never returned.
inline ThoughtSequence generate_thoughts(const corpus::Query& q,
                                         const std::vector<provider::ModelEndpoint>& weak,
                                         int attempts, const provider::GenerationParams& params,
                                         provider::Client& client) {
    if (attempts < 1) throw ContractError("attempt count must be >= 1");
    if (weak.empty()) throw ContractError("at least one weak endpoint is required");
    ThoughtSequence seq;
    seq.query_id = q.id;
    for (int t = 1; t <= attempts; ++t) {
        const auto& endpoint = weak[static_cast<std::size_t>(t - 1) % weak.size()];
        provider::GenerationParams attempt_params = params;
        if (params.seed && params.temperature > 0.0) {
            attempt_params.seed = mix64(*params.seed, static_cast<std::uint64_t>(t));
        }
        const std::string prompt = q.text;
        const auto samples = client.complete(endpoint, prompt, attempt_params);
        Thought thought;
        thought.text = samples.front();
        thought.attempt = t;
        thought.producer = endpoint.key();
        thought.raw_prompt = prompt;
        if (thought.text.empty()) {
            throw ContractError("weak endpoint returned an empty thought for query " + q.id);
        }
        seq.thoughts.push_back(std::move(thought));
    }
    seq.validate();
    return seq;
}

// Strong-model refinement conditioned on the full thought sequence.
inline RefinedAnswer refine_answer(const corpus::Query& q, const ThoughtSequence& s,
                                   const provider::ModelEndpoint& strong,
                                   const provider::GenerationParams& params,
                                   provider::Client& client,
                                   const IclTemplate& tmpl = default_icl_template()) {
    if (strong.role != provider::Role::strong) {
        throw ContractError("refine_answer requires an endpoint with role=strong");
    }
    RefinedAnswer answer;
    answer.icl_prompt = assemble_icl_prompt(q, s, tmpl);
    const auto samples = client.complete(strong, answer.icl_prompt, params);
    answer.text = samples.front();
    answer.producer = strong.key();
    if (answer.text.empty()) {
        throw ContractError("strong endpoint returned an empty answer for query " + q.id);
    }
    return answer;
}

// One generated sample before consistency filtering; also the row format of
// the generation manifest file.
struct Candidate {
    corpus::Query query;
    ThoughtSequence thoughts;
    RefinedAnswer answer;
};

}  // namespace ptr::generation
