// Command-line entrypoint for the progressive thought refinement pipeline:
//   clean                raw records -> cleaned queries + report
//   build                full dataset construction (clean/generate/filter/emit)
//   emit-train           re-mask an existing candidates manifest
//   validate-separation  Wilcoxon signed-rank weak/strong validation
//   refine               inference-time iterative refinement loop
//   eval                 score refine sessions per iteration
//   loss-check           reference-loss breakdowns + gradient check battery
//
// Exit codes: 0 success, 1 contract violation, 2 config error, 3 provider
// failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptr/config.hpp"
#include "ptr/pipeline.hpp"

namespace {

using ptr::config::PipelineConfig;
using json = nlohmann::json;

enum ExitCode { kOk = 0, kContract = 1, kConfig = 2, kProvider = 3 };

struct Logger {
    bool structured = false;

    void info(const std::string& event, const json& fields = json::object()) const {
        if (structured) {
            json row = fields;
            row["event"] = event;
            row["level"] = "info";
            std::cout << row.dump() << "\n";
        } else {
            std::cout << event;
            for (const auto& [k, v] : fields.items()) {
                std::cout << " " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump());
            }
            std::cout << "\n";
        }
    }
};

struct CommonOpts {
    std::string config_path;
    std::string log_level = "info";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    std::string input;
    std::string output_dir;
};

PipelineConfig load_config(const CommonOpts& opts) {
    if (opts.config_path.empty()) throw ptr::ConfigError("--config is required for this command");
    PipelineConfig cfg = ptr::config::load_pipeline_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.jobs) cfg.jobs = *opts.jobs;
    if (!opts.input.empty()) cfg.paths.input = opts.input;
    if (!opts.output_dir.empty()) cfg.paths.output_dir = opts.output_dir;
    cfg.validate();
    return cfg;
}

ptr::provider::ModelEndpoint endpoint_from_flags(const std::string& url, const std::string& model,
                                                 ptr::provider::Role role) {
    ptr::provider::ModelEndpoint e;
    e.role = role;
    e.base_url = url;
    e.model_name = model;
    e.validate();
    return e;
}

int run_clean(const CommonOpts& opts, const Logger& log) {
    PipelineConfig cfg = load_config(opts);
    auto result = ptr::pipeline::cmd_clean(cfg);
    log.info("clean finished", {{"kept", result.report.kept},
                                {"rejected_empty", result.report.rejected_empty},
                                {"rejected_noise", result.report.rejected_noise},
                                {"deduped", result.report.deduped},
                                {"leaked", result.report.leaked},
                                {"output_dir", cfg.paths.output_dir}});
    return kOk;
}

int run_build(const CommonOpts& opts, const Logger& log) {
    PipelineConfig cfg = load_config(opts);
    auto result = ptr::pipeline::cmd_build(cfg);
    log.info("build finished", {{"queries", result.clean_report.kept},
                                {"candidates", result.candidates},
                                {"kept", result.kept},
                                {"dropped", result.dropped},
                                {"sft_items", result.sft_items},
                                {"training_examples", result.training_examples},
                                {"manifest", result.manifest_path}});
    if (result.kept == 0) {
        std::cerr << "build produced no surviving samples\n";
        return kContract;
    }
    return kOk;
}

int run_emit_train(const CommonOpts& opts, const Logger& log, const std::string& candidates,
                   const std::string& out, std::optional<double> kappa,
                   std::optional<double> delta, const std::string& instruction,
                   std::optional<double> answer_weight) {
    PipelineConfig cfg = load_config(opts);
    if (kappa) cfg.consistency_cfg.kappa = *kappa;
    if (delta) cfg.consistency_cfg.delta = *delta;
    if (!instruction.empty()) cfg.dataset_cfg.instruction = instruction;
    if (answer_weight) cfg.dataset_cfg.answer_weight = *answer_weight;
    cfg.validate();
    auto result = ptr::pipeline::cmd_emit_train(cfg, candidates, out);
    log.info("emit-train finished",
             {{"kept", result.kept}, {"dropped", result.dropped}, {"out", out}});
    if (result.kept == 0) {
        std::cerr << "emit-train kept no samples\n";
        return kContract;
    }
    return kOk;
}

int run_validate_separation(const std::string& scores, const Logger&) {
    auto rows = ptr::pipeline::cmd_validate_separation(scores);
    std::cout << ptr::pipeline::format_separation_table(rows);
    return kOk;
}

int run_refine(const CommonOpts& opts, const Logger& log, const std::string& queries_path,
               const std::string& out, int k, const std::string& prompt_id, double temperature,
               std::optional<double> decay, const std::string& format, bool stop_on_fixpoint,
               bool last_only, const std::string& endpoint_url, const std::string& model) {
    ptr::provider::ModelEndpoint endpoint;
    std::uint64_t seed = opts.seed.value_or(0);
    if (!endpoint_url.empty()) {
        endpoint = endpoint_from_flags(endpoint_url, model, ptr::provider::Role::strong);
    } else {
        PipelineConfig cfg = load_config(opts);
        endpoint = cfg.strong;
        if (!opts.seed) seed = cfg.seed;
    }
    ptr::refine::RefinePrompt prompt = ptr::refine::find_refine_prompt(prompt_id);
    ptr::refine::TemperatureSchedule sched =
        decay ? ptr::refine::TemperatureSchedule::decaying(temperature, *decay)
              : ptr::refine::TemperatureSchedule::fixed(temperature);
    ptr::refine::RefineOptions ropts;
    ropts.iterations = k;
    ropts.format = ptr::refine::answer_format_from_string(format);
    ropts.stop_on_fixpoint = stop_on_fixpoint;
    ropts.last_only = last_only;

    ptr::provider::Client client;
    std::vector<json> rows;
    for (const auto& [line_no, row] : ptr::io::read_jsonl_rows(queries_path)) {
        ptr::corpus::Query q = ptr::io::query_from_json(row, line_no);
        ptr::provider::GenerationParams params;
        params.seed = ptr::mix64(seed, ptr::fnv1a64(q.id));
        auto session = ptr::refine::run_iterations(q, endpoint, prompt, sched, ropts, client, params);
        rows.push_back(ptr::io::session_to_json(session));
    }
    ptr::io::write_jsonl(out, rows);
    log.info("refine finished", {{"sessions", rows.size()}, {"out", out}});
    return kOk;
}

int run_eval(const CommonOpts&, const Logger& log, const std::string& sessions_path,
             const std::string& task_name, const std::string& metric_name,
             const std::string& gold_path, const std::string& judge_cmd,
             std::optional<double> baseline, unsigned judge_jobs, int judge_timeout_ms,
             const std::string& embed_url, const std::string& format, const std::string& out) {
    ptr::evalkit::TaskSpec task;
    task.name = task_name;
    task.metric = ptr::evalkit::metric_from_string(metric_name);
    task.gold_path = gold_path;
    task.judge_cmd = judge_cmd;
    const bool reextract = !format.empty();
    if (reextract) task.extract_format = ptr::refine::answer_format_from_string(format);
    task.validate();

    // Gold answers keyed by item id.
    std::map<std::string, std::string> gold;
    if (!gold_path.empty()) {
        for (const auto& [line_no, row] : ptr::io::read_jsonl_rows(gold_path)) {
            if (!row.contains("id") || !row.contains("answer")) {
                throw ptr::ParseError(line_no, "id/answer", "gold rows need id and answer");
            }
            gold[row.at("id").get<std::string>()] = row.at("answer").get<std::string>();
        }
    }

    struct Item {
        std::string id;
        std::vector<std::string> answers;  // one per iteration
    };
    std::vector<Item> items;
    std::size_t iterations = 0;
    for (const auto& row : ptr::io::read_jsonl(sessions_path)) {
        if (row.value("aborted", false)) continue;
        Item item;
        item.id = row.at("query_id").get<std::string>();
        for (const auto& trace : row.at("traces")) {
            if (reextract) {
                item.answers.push_back(
                    ptr::refine::extract_answer(trace.at("response").get<std::string>(),
                                                task.extract_format)
                        .text);
            } else {
                item.answers.push_back(trace.at("extracted").get<std::string>());
            }
        }
        if (iterations == 0) iterations = item.answers.size();
        if (item.answers.size() != iterations) {
            throw ptr::ContractError("sessions have unequal iteration counts (ragged matrix)");
        }
        items.push_back(std::move(item));
    }
    if (items.empty()) throw ptr::ContractError("no complete sessions to evaluate");

    std::optional<ptr::provider::Client> client;
    std::optional<ptr::consistency::Embedder> embedder;
    if (task.metric == ptr::evalkit::Metric::similarity) {
        if (embed_url.empty()) throw ptr::ConfigError("similarity metric requires --embed-url");
        client.emplace();
        embedder.emplace(*client, endpoint_from_flags(embed_url, "embed", ptr::provider::Role::embed));
    }

    std::vector<std::vector<double>> scores(items.size(), std::vector<double>(iterations, 0.0));
    std::vector<std::string> judge_errors;
    std::mutex error_mutex;
    ptr::parallel_for(
        items.size() * iterations,
        task.metric == ptr::evalkit::Metric::external_judge ? judge_jobs : 1,
        [&](std::size_t flat) {
            const std::size_t i = flat / iterations;
            const std::size_t it = flat % iterations;
            const Item& item = items[i];
            const std::string& pred = item.answers[it];
            switch (task.metric) {
                case ptr::evalkit::Metric::exact_match: {
                    auto g = gold.find(item.id);
                    if (g == gold.end()) throw ptr::ContractError("no gold answer for " + item.id);
                    scores[i][it] = ptr::evalkit::score_exact(pred, g->second);
                    break;
                }
                case ptr::evalkit::Metric::similarity: {
                    auto g = gold.find(item.id);
                    if (g == gold.end()) throw ptr::ContractError("no gold answer for " + item.id);
                    scores[i][it] = ptr::evalkit::score_similarity(pred, g->second, *embedder) / 100.0;
                    break;
                }
                case ptr::evalkit::Metric::external_judge: {
                    json meta = {{"id", item.id}, {"iteration", it + 1}};
                    if (auto g = gold.find(item.id); g != gold.end()) meta["gold"] = g->second;
                    auto outcome =
                        ptr::evalkit::run_external_judge(task.judge_cmd, pred, meta, judge_timeout_ms);
                    scores[i][it] = outcome.score;
                    if (!outcome.ok) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        judge_errors.push_back(item.id + "@" + std::to_string(it + 1) + ": " +
                                               outcome.error);
                    }
                    break;
                }
            }
        });

    auto report = ptr::evalkit::aggregate_iterations(task.name, scores, baseline);
    std::cout << ptr::evalkit::format_report(report);
    for (const auto& err : judge_errors) std::cerr << "judge error: " << err << "\n";
    if (!out.empty()) {
        json jreport = {{"task", report.task}, {"deltas", report.deltas}};
        json per_it = json::array();
        for (const auto& [iteration, score] : report.per_iteration) {
            per_it.push_back({{"iteration", iteration}, {"score", score}});
        }
        jreport["per_iteration"] = per_it;
        if (report.baseline) jreport["baseline"] = *report.baseline;
        jreport["judge_errors"] = judge_errors;
        ptr::io::write_text(out, jreport.dump(2) + "\n");
    }
    log.info("eval finished", {{"items", items.size()}, {"iterations", iterations}});
    return kOk;
}

int run_loss_check(const std::string& cases_path, const Logger&) {
    auto result = ptr::pipeline::cmd_loss_check(cases_path);
    std::size_t i = 0;
    for (const auto& [c, breakdown] : result.cases) {
        std::printf("case %zu: answer=%.12g consistency=%.12g confidence=%.12g total=%.12g\n", ++i,
                    breakdown.term_answer, breakdown.term_consistency, breakdown.term_confidence,
                    breakdown.total);
    }
    std::printf("grad_check: max relative error %.3g (tolerance %.3g)\n", result.max_grad_error,
                result.grad_tolerance);
    if (!result.ok) {
        std::cerr << "gradient check exceeded tolerance\n";
        return kContract;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Progressive thought refinement pipeline"};
    app.require_subcommand(1);

    CommonOpts common;
    app.add_option("--config", common.config_path, "Pipeline config file (.toml or .json)");
    app.add_option("--log-level", common.log_level, "info or debug (debug logs JSON lines)");
    app.add_option("--seed", common.seed, "Override the config seed");
    app.add_option("--jobs", common.jobs, "Worker cap across pipeline stages");
    app.add_option("--input", common.input, "Override paths.input");
    app.add_option("--output-dir", common.output_dir, "Override paths.output_dir");

    auto* clean = app.add_subcommand("clean", "Clean raw records into queries");
    auto* build = app.add_subcommand("build", "Run the full dataset construction pipeline");

    auto* emit = app.add_subcommand("emit-train", "Re-mask an existing candidates manifest");
    std::string emit_candidates;
    std::string emit_out = "train.jsonl";
    std::string emit_instruction;
    std::optional<double> emit_kappa;
    std::optional<double> emit_delta;
    std::optional<double> emit_answer_weight;
    emit->add_option("--candidates", emit_candidates, "candidates.jsonl from a build run")
        ->required();
    emit->add_option("--out", emit_out, "Output training-example file");
    emit->add_option("--kappa", emit_kappa, "Override consistency kappa");
    emit->add_option("--delta", emit_delta, "Override consistency delta");
    emit->add_option("--instruction", emit_instruction, "Override the refine instruction");
    emit->add_option("--answer-weight", emit_answer_weight, "Override the answer span weight");

    auto* validate = app.add_subcommand("validate-separation",
                                        "Wilcoxon signed-rank test of strong vs weak scores");
    std::string scores_path;
    validate->add_option("--scores", scores_path, "JSONL of {item_id, weak, strong, task?}")
        ->required();

    auto* refine = app.add_subcommand("refine", "Iterative refinement loop");
    std::string refine_queries;
    std::string refine_out = "sessions.jsonl";
    int refine_k = 3;
    std::string refine_prompt = "p1";
    double refine_temperature = 0.0;
    std::optional<double> refine_decay;
    std::string refine_format = "freeform";
    bool refine_fixpoint = false;
    bool refine_last_only = false;
    std::string refine_endpoint_url;
    std::string refine_model = "default";
    refine->add_option("--queries", refine_queries, "Queries JSONL ({id, text})")->required();
    refine->add_option("--out", refine_out, "Output sessions JSONL");
    refine->add_option("--k", refine_k, "Iteration count (1-10)")
        ->check(CLI::Range(1, 10));
    refine->add_option("--prompt-id", refine_prompt, "p1 | p2 | p3 | continue");
    refine->add_option("--temperature", refine_temperature, "Fixed temperature (default 0)");
    refine->add_option("--decay", refine_decay,
                       "Decay factor; turns --temperature into a decaying start value");
    refine->add_option("--format", refine_format, "freeform | boxed | choice_letter | code_block");
    refine->add_flag("--stop-on-fixpoint", refine_fixpoint,
                     "Stop early when an iteration repeats the previous answer");
    refine->add_flag("--last-only", refine_last_only,
                     "Feed only the previous answer instead of the full history");
    refine->add_option("--endpoint-url", refine_endpoint_url,
                       "Use this endpoint (e.g. mock:7) instead of the config's strong endpoint");
    refine->add_option("--model", refine_model, "Model name for --endpoint-url");

    auto* eval = app.add_subcommand("eval", "Score refine sessions per iteration");
    std::string eval_sessions;
    std::string eval_task = "task";
    std::string eval_metric = "exact_match";
    std::string eval_gold;
    std::string eval_judge_cmd;
    std::optional<double> eval_baseline;
    unsigned eval_judge_jobs = 4;
    int eval_judge_timeout = 30000;
    std::string eval_embed_url;
    std::string eval_format;
    std::string eval_out;
    eval->add_option("--sessions", eval_sessions, "sessions.jsonl from refine")->required();
    eval->add_option("--task", eval_task, "Task name for the report");
    eval->add_option("--metric", eval_metric, "exact_match | similarity | external_judge");
    eval->add_option("--gold", eval_gold, "Gold answers JSONL ({id, answer})");
    eval->add_option("--judge-cmd", eval_judge_cmd, "External judge command (reads JSON on stdin)");
    eval->add_option("--baseline", eval_baseline, "Baseline score on the 0-100 scale");
    eval->add_option("--judge-jobs", eval_judge_jobs, "Concurrent judge subprocesses");
    eval->add_option("--judge-timeout-ms", eval_judge_timeout, "Judge timeout per item");
    eval->add_option("--embed-url", eval_embed_url, "Embedding endpoint for the similarity metric");
    eval->add_option("--format", eval_format,
                     "Re-extract answers from raw responses with this format");
    eval->add_option("--out", eval_out, "Also write the report as JSON");

    auto* loss_check = app.add_subcommand("loss-check", "Reference loss breakdowns + grad check");
    std::string loss_cases;
    loss_check->add_option("--cases", loss_cases, "JSON case file")->required();

    CLI11_PARSE(app, argc, argv);

    Logger log{common.log_level == "debug"};
    try {
        if (clean->parsed()) return run_clean(common, log);
        if (build->parsed()) return run_build(common, log);
        if (emit->parsed()) {
            return run_emit_train(common, log, emit_candidates, emit_out, emit_kappa, emit_delta,
                                  emit_instruction, emit_answer_weight);
        }
        if (validate->parsed()) return run_validate_separation(scores_path, log);
        if (refine->parsed()) {
            return run_refine(common, log, refine_queries, refine_out, refine_k, refine_prompt,
                              refine_temperature, refine_decay, refine_format, refine_fixpoint,
                              refine_last_only, refine_endpoint_url, refine_model);
        }
        if (eval->parsed()) {
            return run_eval(common, log, eval_sessions, eval_task, eval_metric, eval_gold,
                            eval_judge_cmd, eval_baseline, eval_judge_jobs, eval_judge_timeout,
                            eval_embed_url, eval_format, eval_out);
        }
        if (loss_check->parsed()) return run_loss_check(loss_cases, log);
    } catch (const ptr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ptr::provider::ProviderError& e) {
        std::cerr << "provider error: " << e.what() << "\n";
        return e.kind() == ptr::provider::ProviderErrorKind::precondition ? kContract : kProvider;
    } catch (const ptr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kContract;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kContract;
    }
    return kOk;
}
