#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "ptr/corpus.hpp"
#include "ptr/generation.hpp"
#include "ptr/provider.hpp"
#include "ptr/text.hpp"
#include "ptr/util.hpp"

namespace ptr::refine {

// Refinement instruction template; {history} and {query} are both required.
struct RefinePrompt {
    std::string id;
    std::string text;

    void validate() const {
        if (text.find("{history}") == std::string::npos ||
            text.find("{query}") == std::string::npos) {
            throw ConfigError("refine prompt '" + id +
                              "' must contain {history} and {query} placeholders");
        }
    }
};

// The three instruction variants evaluated for robustness, plus the
// continue-style instruction used in training data. "p1" is the default.
inline std::vector<RefinePrompt> default_refine_prompts() {
    const std::string frame = "Question: {query}\n\n{history}\n\n";
    return {
        {"p1", frame +
                   "Assume that this thought could be either correct or incorrect. "
                   "Carefully review the thought and provide a better answer."},
        {"p2", frame +
                   "Review your previous thought and assess whether it's correct. "
                   "Then, provide a better response based on your answer."},
        {"p3", frame +
                   "Regardless of whether your previous thought is correct or not, "
                   "provide a better answer."},
        {"continue", frame + std::string(generation::kRefineInstruction) + "."},
    };
}

inline RefinePrompt find_refine_prompt(const std::string& id) {
    for (auto& p : default_refine_prompts()) {
        if (p.id == id) return p;
    }
    throw ConfigError("unknown refine prompt id: " + id);
}

struct TemperatureSchedule {
    enum class Kind { fixed, decaying };
    Kind kind = Kind::fixed;
    double value = 0.0;         // fixed
    double start = 0.8;         // decaying
    double decay_factor = 0.5;  // decaying, in (0,1]

    static TemperatureSchedule fixed(double v) {
        TemperatureSchedule s;
        s.kind = Kind::fixed;
        s.value = v;
        return s;
    }

    static TemperatureSchedule decaying(double start, double factor) {
        TemperatureSchedule s;
        s.kind = Kind::decaying;
        s.start = start;
        s.decay_factor = factor;
        return s;
    }

    void validate() const {
        if (kind == Kind::fixed) {
            if (value < 0.0) throw ConfigError("temperature must be >= 0");
        } else {
            if (start < 0.0) throw ConfigError("temperature must be >= 0");
            if (decay_factor <= 0.0 || decay_factor > 1.0) {
                throw ConfigError("decay factor must lie in (0,1]");
            }
        }
    }

    double at(int iteration) const {
        if (kind == Kind::fixed) return value;
        double t = start;
        for (int i = 1; i < iteration; ++i) t *= decay_factor;
        return t;
    }
};

enum class AnswerFormat { freeform, boxed, choice_letter, code_block };

inline const char* to_string(AnswerFormat f) {
    switch (f) {
        case AnswerFormat::freeform: return "freeform";
        case AnswerFormat::boxed: return "boxed";
        case AnswerFormat::choice_letter: return "choice_letter";
        case AnswerFormat::code_block: return "code_block";
    }
    return "freeform";
}

inline AnswerFormat answer_format_from_string(const std::string& s) {
    if (s == "freeform") return AnswerFormat::freeform;
    if (s == "boxed") return AnswerFormat::boxed;
    if (s == "choice_letter") return AnswerFormat::choice_letter;
    if (s == "code_block") return AnswerFormat::code_block;
    throw ConfigError("unknown answer format: " + s);
}

struct Extracted {
    std::string text;
    bool warned = false;  // set when the format found no match
};

namespace detail {

inline std::optional<std::string> last_boxed(const std::string& s) {
    const std::string marker = "\\boxed{";
    std::size_t pos = s.rfind(marker);
    if (pos == std::string::npos) return std::nullopt;
    std::size_t i = pos + marker.size();
    int depth = 1;
    std::string content;
    while (i < s.size()) {
        const char c = s[i];
        if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) return content;
        }
        content.push_back(c);
        ++i;
    }
    return std::nullopt;  // unbalanced
}

inline std::optional<std::string> last_choice_letter(const std::string& s) {
    std::optional<std::string> found;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c < 'A' || c > 'E') continue;
        const bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(s[i - 1]));
        const bool right_ok =
            i + 1 == s.size() || !std::isalnum(static_cast<unsigned char>(s[i + 1]));
        if (left_ok && right_ok) found = std::string(1, c);
    }
    return found;
}

inline std::optional<std::string> last_code_block(const std::string& s) {
    const std::string fence = "```";
    std::size_t close = s.rfind(fence);
    if (close == std::string::npos) return std::nullopt;
    std::size_t open = s.rfind(fence, close - 1);
    while (open != std::string::npos && open + fence.size() > close) {
        if (open == 0) return std::nullopt;
        open = s.rfind(fence, open - 1);
    }
    if (open == std::string::npos) return std::nullopt;
    std::size_t body_start = open + fence.size();
    // Skip a language tag on the opening fence line.
    const std::size_t eol = s.find('\n', body_start);
    if (eol != std::string::npos && eol < close) body_start = eol + 1;
    if (body_start > close) return std::nullopt;
    std::string body = s.substr(body_start, close - body_start);
    if (!body.empty() && body.back() == '\n') body.pop_back();
    return body;
}

}  // namespace detail

// Lenient answer extraction: formats that find no match fall back to the
// whole trimmed response and set the warning flag.
inline Extracted extract_answer(const std::string& response, AnswerFormat format) {
    switch (format) {
        case AnswerFormat::freeform:
            return {text::trim(response), false};
        case AnswerFormat::boxed:
            if (auto m = detail::last_boxed(response)) return {*m, false};
            break;
        case AnswerFormat::choice_letter:
            if (auto m = detail::last_choice_letter(response)) return {*m, false};
            break;
        case AnswerFormat::code_block:
            if (auto m = detail::last_code_block(response)) return {*m, false};
            break;
    }
    return {text::trim(response), true};
}

struct IterationTrace {
    int iteration = 1;
    std::string prompt;
    std::string response;
    std::string extracted;
    bool extraction_warned = false;
    double temperature = 0.0;
};

struct RefineSession {
    std::string query_id;
    std::vector<IterationTrace> traces;
    std::string final_answer;  // extracted answer of the last trace
    bool aborted = false;      // provider failure mid-session
    std::string error;
    bool stopped_on_fixpoint = false;
};

struct RefineOptions {
    int iterations = 3;
    AnswerFormat format = AnswerFormat::freeform;
    bool stop_on_fixpoint = false;
    bool last_only = false;  // feed only the previous answer instead of the full history
};

namespace detail {

inline std::string render_history(const std::vector<IterationTrace>& traces, bool last_only) {
    std::string out;
    const std::size_t begin = last_only && traces.size() > 1 ? traces.size() - 1 : 0;
    for (std::size_t i = begin; i < traces.size(); ++i) {
        if (!out.empty()) out.push_back('\n');
        out += "Previous thought " + std::to_string(traces[i].iteration) + ": " +
               traces[i].extracted;
    }
    return out;
}

}  // namespace detail

// Inference-time progressive refinement. Iteration 1 sends the bare query
// (zero-shot); iteration i > 1 renders the prompt template with the history
// of prior extracted answers. A session is strictly sequential.
inline RefineSession run_iterations(const corpus::Query& q,
                                    const provider::ModelEndpoint& endpoint,
                                    const RefinePrompt& prompt, const TemperatureSchedule& sched,
                                    const RefineOptions& opts, provider::Client& client,
                                    const provider::GenerationParams& base_params = {}) {
    if (opts.iterations < 1) throw ContractError("iteration count must be >= 1");
    prompt.validate();
    sched.validate();
    RefineSession session;
    session.query_id = q.id;
    for (int i = 1; i <= opts.iterations; ++i) {
        IterationTrace trace;
        trace.iteration = i;
        trace.temperature = sched.at(i);
        if (i == 1) {
            trace.prompt = q.text;
        } else {
            std::string rendered = prompt.text;
            generation::detail::replace_all(rendered, "{query}", q.text);
            generation::detail::replace_all(
                rendered, "{history}", detail::render_history(session.traces, opts.last_only));
            trace.prompt = rendered;
        }
        provider::GenerationParams params = base_params;
        params.temperature = trace.temperature;
        params.n_samples = 1;
        if (base_params.seed && trace.temperature > 0.0) {
            params.seed = mix64(*base_params.seed, static_cast<std::uint64_t>(i));
        }
        try {
            trace.response = client.complete(endpoint, trace.prompt, params).front();
        } catch (const provider::ProviderError& e) {
            session.aborted = true;
            session.error = e.what();
            break;
        }
        const Extracted ex = extract_answer(trace.response, opts.format);
        trace.extracted = ex.text;
        trace.extraction_warned = ex.warned;
        session.traces.push_back(std::move(trace));
        if (opts.stop_on_fixpoint && session.traces.size() >= 2) {
            const auto& cur = session.traces[session.traces.size() - 1];
            const auto& prev = session.traces[session.traces.size() - 2];
            if (cur.extracted == prev.extracted) {
                session.stopped_on_fixpoint = true;
                break;
            }
        }
    }
    if (!session.traces.empty()) session.final_answer = session.traces.back().extracted;
    return session;
}

}  // namespace ptr::refine
