#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptr/consistency.hpp"
#include "ptr/corpus.hpp"
#include "ptr/generation.hpp"
#include "ptr/util.hpp"

namespace ptr::dataset {

using json = nlohmann::json;

class NotKeptError : public ContractError {
public:
    explicit NotKeptError(const std::string& msg) : ContractError(msg) {}
};

// One element of the refinement dataset. Only consistency-kept samples may
// be assembled.
struct PtrSample {
    corpus::Query query;
    generation::ThoughtSequence thoughts;
    generation::RefinedAnswer answer;
    consistency::ConsistencyScore consistency;
};

inline PtrSample assemble(const corpus::Query& q, const generation::ThoughtSequence& s,
                          const generation::RefinedAnswer& a,
                          const consistency::ConsistencyScore& score) {
    if (!score.kept) {
        throw NotKeptError("sample for query " + q.id + " failed consistency filtering");
    }
    return PtrSample{q, s, a, score};
}

enum class SpanRole { query, thought, refine_instruction, answer };

inline const char* to_string(SpanRole r) {
    switch (r) {
        case SpanRole::query: return "query";
        case SpanRole::thought: return "thought";
        case SpanRole::refine_instruction: return "refine_instruction";
        case SpanRole::answer: return "answer";
    }
    return "query";
}

inline SpanRole span_role_from_string(const std::string& s) {
    if (s == "query") return SpanRole::query;
    if (s == "thought") return SpanRole::thought;
    if (s == "refine_instruction") return SpanRole::refine_instruction;
    if (s == "answer") return SpanRole::answer;
    throw ContractError("unknown span role: " + s);
}

struct Span {
    SpanRole role;
    std::string text;
    double loss_weight = 0.0;

    bool operator==(const Span&) const = default;
};

// Role-tagged text spans with per-span loss weights. Concatenating the span
// texts reproduces the exact training string; every non-answer span carries
// weight zero (the thought mask).
struct TrainingExample {
    std::vector<Span> spans;
    std::string query_id;
    int thought_count = 0;

    bool operator==(const TrainingExample&) const = default;

    std::string full_text() const {
        std::string out;
        for (const auto& s : spans) out += s.text;
        return out;
    }
};

inline void validate_training_example(const TrainingExample& ex) {
    const auto& spans = ex.spans;
    const std::size_t expected = 2 + 2 * static_cast<std::size_t>(ex.thought_count);
    if (spans.size() != expected) {
        throw ContractError("expected " + std::to_string(expected) + " spans, got " +
                            std::to_string(spans.size()));
    }
    if (spans.front().role != SpanRole::query) throw ContractError("first span must be query");
    if (spans.back().role != SpanRole::answer) throw ContractError("last span must be answer");
    for (int t = 0; t < ex.thought_count; ++t) {
        if (spans[1 + 2 * t].role != SpanRole::thought ||
            spans[2 + 2 * t].role != SpanRole::refine_instruction) {
            throw ContractError("spans must alternate thought / refine_instruction");
        }
    }
    for (const auto& s : spans) {
        if (s.role == SpanRole::answer) {
            if (s.loss_weight <= 0.0) throw ContractError("answer span weight must be > 0");
        } else if (s.loss_weight != 0.0) {
            throw ContractError("masked span has nonzero loss weight");
        }
    }
}

// Serializes a kept sample into the thought-masked span layout:
// query, (thought, refine_instruction) per attempt, answer.
inline TrainingExample to_training_example(const PtrSample& sample, const std::string& instruction,
                                           double answer_weight) {
    if (instruction.empty()) throw ContractError("refine instruction is empty");
    if (answer_weight <= 0.0) throw ContractError("answer_weight must be > 0");
    TrainingExample ex;
    ex.query_id = sample.query.id;
    ex.thought_count = static_cast<int>(sample.thoughts.thoughts.size());
    ex.spans.push_back({SpanRole::query, sample.query.text + "\n", 0.0});
    for (const auto& t : sample.thoughts.thoughts) {
        ex.spans.push_back({SpanRole::thought, t.text + "\n", 0.0});
        ex.spans.push_back({SpanRole::refine_instruction, instruction + "\n", 0.0});
    }
    ex.spans.push_back({SpanRole::answer, sample.answer.text, answer_weight});
    validate_training_example(ex);
    return ex;
}

// Plain SFT pair in the same span format (zero thoughts).
inline TrainingExample make_sft_example(const corpus::Query& q, double answer_weight) {
    if (!q.sft_answer || q.sft_answer->empty()) {
        throw ContractError("sft example requires a nonempty answer: query " + q.id);
    }
    if (answer_weight <= 0.0) throw ContractError("answer_weight must be > 0");
    TrainingExample ex;
    ex.query_id = q.id;
    ex.thought_count = 0;
    ex.spans.push_back({SpanRole::query, q.text + "\n", 0.0});
    ex.spans.push_back({SpanRole::answer, *q.sft_answer, answer_weight});
    validate_training_example(ex);
    return ex;
}

inline json to_json(const TrainingExample& ex) {
    json spans = json::array();
    for (const auto& s : ex.spans) {
        spans.push_back({{"role", to_string(s.role)}, {"text", s.text}, {"loss_weight", s.loss_weight}});
    }
    return json{{"meta", {{"query_id", ex.query_id}, {"thought_count", ex.thought_count}}},
                {"spans", spans}};
}

inline TrainingExample training_example_from_json(const json& j, std::size_t line_no) {
    TrainingExample ex;
    if (!j.contains("meta")) throw ParseError(line_no, "meta", "missing");
    if (!j.contains("spans")) throw ParseError(line_no, "spans", "missing");
    try {
        ex.query_id = j.at("meta").at("query_id").get<std::string>();
        ex.thought_count = j.at("meta").at("thought_count").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(line_no, "meta", e.what());
    }
    try {
        for (const auto& s : j.at("spans")) {
            ex.spans.push_back({span_role_from_string(s.at("role").get<std::string>()),
                                s.at("text").get<std::string>(), s.at("loss_weight").get<double>()});
        }
    } catch (const json::exception& e) {
        throw ParseError(line_no, "spans", e.what());
    }
    return ex;
}

// JSON-lines; one example per line, keys in canonical (sorted) order so that
// serialize(parse(b)) == b for well-formed input.
inline std::string serialize(const std::vector<TrainingExample>& examples) {
    std::string out;
    for (const auto& ex : examples) {
        out += to_json(ex).dump();
        out.push_back('\n');
    }
    return out;
}

inline std::vector<TrainingExample> parse(const std::string& bytes) {
    std::vector<TrainingExample> examples;
    std::istringstream in(bytes);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(line_no, "<line>", e.what());
        }
        examples.push_back(training_example_from_json(j, line_no));
    }
    return examples;
}

}  // namespace ptr::dataset
