#pragma once

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ptr/consistency.hpp"
#include "ptr/refine.hpp"
#include "ptr/text.hpp"
#include "ptr/util.hpp"

namespace ptr::evalkit {

enum class Metric { exact_match, similarity, external_judge };

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::exact_match: return "exact_match";
        case Metric::similarity: return "similarity";
        case Metric::external_judge: return "external_judge";
    }
    return "exact_match";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "exact_match") return Metric::exact_match;
    if (s == "similarity") return Metric::similarity;
    if (s == "external_judge") return Metric::external_judge;
    throw ConfigError("unknown metric: " + s);
}

struct TaskSpec {
    std::string name;
    Metric metric = Metric::exact_match;
    std::string gold_path;   // required for exact_match / similarity
    std::string judge_cmd;   // required for external_judge
    refine::AnswerFormat extract_format = refine::AnswerFormat::freeform;

    void validate() const {
        if (name.empty()) throw ConfigError("task name is empty");
        if (metric == Metric::external_judge) {
            if (judge_cmd.empty()) throw ConfigError("external_judge requires judge_cmd");
        } else if (gold_path.empty()) {
            throw ConfigError("metric requires a gold answer file");
        }
    }
};

// Shared exact-match normalization: trim, lowercase, collapse whitespace,
// strip trailing periods. Idempotent.
inline std::string normalize_answer(const std::string& s) {
    std::string norm = text::normalize(s);
    while (!norm.empty() && norm.back() == '.') norm.pop_back();
    while (!norm.empty() && norm.back() == ' ') norm.pop_back();
    return norm;
}

inline int score_exact(const std::string& pred, const std::string& gold) {
    return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

// Embedding similarity on the 0-100 reporting scale.
inline double score_similarity(const std::string& pred, const std::string& gold,
                               consistency::Embedder& embedder) {
    if (pred.empty() || gold.empty()) {
        throw ContractError("score_similarity requires nonempty texts");
    }
    return 100.0 * consistency::embed_sim(pred, gold, embedder);
}

struct JudgeOutcome {
    double score = 0.0;
    bool ok = true;
    std::string error;  // timeout / spawn_failure / nonzero_with_no_score
};

namespace detail {

inline std::optional<double> parse_score_line(const std::string& stdout_text) {
    // Last nonempty line, if it is entirely a number.
    std::size_t end = stdout_text.size();
    while (end > 0) {
        std::size_t start = stdout_text.rfind('\n', end - 1);
        const std::size_t line_begin = start == std::string::npos ? 0 : start + 1;
        std::string line = text::trim(stdout_text.substr(line_begin, end - line_begin));
        if (!line.empty()) {
            char* parse_end = nullptr;
            errno = 0;
            const double v = std::strtod(line.c_str(), &parse_end);
            if (errno == 0 && parse_end && *parse_end == '\0' && std::isfinite(v)) return v;
            return std::nullopt;
        }
        if (start == std::string::npos) break;
        end = start;
    }
    return std::nullopt;
}

}  // namespace detail

// Spawns the judge command through /bin/sh, feeds {"prediction", "meta"} as
// JSON on stdin and interprets the result: a numeric last stdout line wins,
// otherwise exit 0 -> 1 and exit 1 -> 0. Failures (timeout, spawn error,
// other exit codes) are recorded and scored 0. Code execution is always the
// judge's business; nothing is ever run in-process.
inline JudgeOutcome run_external_judge(const std::string& judge_cmd, const std::string& pred,
                                       const nlohmann::json& item_meta, int timeout_ms = 30000) {
    JudgeOutcome out;
    if (judge_cmd.empty()) {
        return {0.0, false, "spawn_failure: empty judge command"};
    }
    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
        return {0.0, false, "spawn_failure: pipe() failed"};
    }
    const pid_t pid = fork();
    if (pid < 0) {
        return {0.0, false, "spawn_failure: fork() failed"};
    }
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", judge_cmd.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);

    const std::string payload =
        nlohmann::json{{"prediction", pred}, {"meta", item_meta}}.dump() + "\n";
    // Judges that never read stdin must not kill us with SIGPIPE, and must
    // not deadlock us on a full pipe: stdin is written nonblocking,
    // interleaved with stdout draining, under a wall-clock deadline.
    signal(SIGPIPE, SIG_IGN);
    fcntl(in_pipe[1], F_SETFL, O_NONBLOCK);

    std::string stdout_text;
    bool timed_out = false;
    std::size_t written = 0;
    bool stdin_open = true;
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
        if (stdin_open) {
            while (written < payload.size()) {
                const ssize_t put =
                    write(in_pipe[1], payload.data() + written, payload.size() - written);
                if (put > 0) {
                    written += static_cast<std::size_t>(put);
                } else if (put < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
                    break;
                } else {
                    written = payload.size();  // EPIPE and friends: give up
                }
            }
            if (written >= payload.size()) {
                close(in_pipe[1]);
                stdin_open = false;
            }
        }
        pollfd pfd{out_pipe[0], POLLIN, 0};
        const int r = poll(&pfd, 1, 20);
        if (r > 0 && (pfd.revents & (POLLIN | POLLHUP))) {
            char buf[4096];
            const ssize_t got = read(out_pipe[0], buf, sizeof(buf));
            if (got > 0) {
                stdout_text.append(buf, static_cast<std::size_t>(got));
            } else if (got == 0) {
                break;  // EOF
            } else if (errno != EINTR && errno != EAGAIN) {
                break;
            }
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            timed_out = true;
            kill(pid, SIGKILL);
            break;
        }
    }
    if (stdin_open) close(in_pipe[1]);
    close(out_pipe[0]);

    int status = 0;
    waitpid(pid, &status, 0);
    if (timed_out) {
        return {0.0, false, "timeout"};
    }
    if (const auto score = detail::parse_score_line(stdout_text)) {
        out.score = *score;
        return out;
    }
    const int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (exit_code == 0) {
        out.score = 1.0;
    } else if (exit_code == 1) {
        out.score = 0.0;
    } else {
        return {0.0, false, "nonzero_with_no_score: exit " + std::to_string(exit_code)};
    }
    return out;
}

// Per-iteration aggregate on the 0-100 reporting scale, with deltas against
// the previous iteration (iteration 1 against the baseline when given).
struct IterationReport {
    std::string task;
    std::vector<std::pair<int, double>> per_iteration;  // (iteration, mean * 100)
    std::vector<double> deltas;
    std::optional<double> baseline;  // already on the 0-100 scale
};

// scores[item][iteration] in [0,1]; the matrix must be rectangular.
inline IterationReport aggregate_iterations(const std::string& task,
                                            const std::vector<std::vector<double>>& scores,
                                            std::optional<double> baseline = std::nullopt) {
    if (scores.empty() || scores.front().empty()) {
        throw ContractError("aggregate_iterations needs at least one item and one iteration");
    }
    const std::size_t iterations = scores.front().size();
    for (const auto& row : scores) {
        if (row.size() != iterations) throw ContractError("ragged score matrix");
    }
    IterationReport report;
    report.task = task;
    report.baseline = baseline;
    for (std::size_t it = 0; it < iterations; ++it) {
        double sum = 0.0;
        for (const auto& row : scores) sum += row[it];
        const double mean100 = 100.0 * sum / static_cast<double>(scores.size());
        report.per_iteration.emplace_back(static_cast<int>(it) + 1, mean100);
        if (it == 0) {
            report.deltas.push_back(baseline ? mean100 - *baseline : 0.0);
        } else {
            report.deltas.push_back(mean100 - report.per_iteration[it - 1].second);
        }
    }
    return report;
}

inline std::string format_delta(double delta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", delta);
    // Avoid the "-0.0" rendering.
    if (std::string(buf) == "-0.0") return "+0.0";
    return buf;
}

// Aligned text table mirroring the per-iteration layout with (+x.y) deltas.
inline std::string format_report(const IterationReport& report) {
    std::string out = report.task + "\n";
    char buf[96];
    if (report.baseline) {
        std::snprintf(buf, sizeof(buf), "  %-12s %6.1f\n", "Baseline", *report.baseline);
        out += buf;
    }
    for (std::size_t i = 0; i < report.per_iteration.size(); ++i) {
        const auto& [iteration, score] = report.per_iteration[i];
        std::string label = "Iteration " + std::to_string(iteration);
        if (i == 0 && !report.baseline) {
            std::snprintf(buf, sizeof(buf), "  %-12s %6.1f\n", label.c_str(), score);
        } else {
            std::snprintf(buf, sizeof(buf), "  %-12s %6.1f (%s)\n", label.c_str(), score,
                          format_delta(report.deltas[i]).c_str());
        }
        out += buf;
    }
    return out;
}

}  // namespace ptr::evalkit
