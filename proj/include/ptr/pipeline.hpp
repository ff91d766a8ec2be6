#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptr/config.hpp"
#include "ptr/consistency.hpp"
#include "ptr/corpus.hpp"
#include "ptr/dataset.hpp"
#include "ptr/evalkit.hpp"
#include "ptr/generation.hpp"
#include "ptr/jsonl.hpp"
#include "ptr/loss.hpp"
#include "ptr/provider.hpp"
#include "ptr/refine.hpp"
#include "ptr/stats.hpp"
#include "ptr/util.hpp"

namespace ptr::pipeline {

using json = nlohmann::json;

struct BuildResult {
    corpus::CleanReport clean_report;
    std::size_t sft_items = 0;
    std::size_t candidates = 0;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    std::size_t training_examples = 0;
    std::string output_dir;
    std::string manifest_path;
};

namespace detail {

inline std::vector<std::string> read_eval_query_texts(const std::string& path) {
    std::vector<std::string> texts;
    for (const auto& row : io::read_jsonl(path)) {
        if (row.is_string()) {
            texts.push_back(row.get<std::string>());
        } else if (row.contains("text")) {
            texts.push_back(row.at("text").get<std::string>());
        }
    }
    return texts;
}

inline std::vector<corpus::Query> read_sft_queries(const std::string& path,
                                                   const corpus::CleaningRules& rules) {
    std::vector<corpus::Query> out;
    for (const auto& rec : io::read_raw_records(path)) {
        corpus::CleanOutcome o = corpus::clean_record(rec, rules);
        if (o.query && o.query->sft_answer) out.push_back(std::move(*o.query));
    }
    return out;
}

inline generation::IclTemplate load_icl_template(const config::PipelineConfig& cfg) {
    generation::IclTemplate tmpl = generation::default_icl_template();
    if (!cfg.paths.icl_template.empty()) {
        tmpl.body = config::read_file(cfg.paths.icl_template);
    }
    tmpl.instruction = cfg.dataset_cfg.instruction;
    return tmpl;
}

}  // namespace detail

// Full dataset construction: clean -> generate -> filter -> emit-train.
// Deterministic for a fixed (config, seed) under mock providers: per-sample
// seeds derive from the query id, results are collected in input order, and
// no timestamps enter the outputs.
inline BuildResult cmd_build(const config::PipelineConfig& cfg,
                             provider::Client* injected_client = nullptr) {
    cfg.validate();
    if (cfg.paths.input.empty()) throw ConfigError("paths.input is required for build");

    provider::Client own_client(nullptr, cfg.provider_cfg.retry_policy());
    provider::Client& client = injected_client ? *injected_client : own_client;

    const auto records = io::read_raw_records(cfg.paths.input);

    std::optional<corpus::LeakageIndex> leakage;
    if (!cfg.paths.eval_queries.empty()) {
        leakage = corpus::build_leakage_index(detail::read_eval_query_texts(cfg.paths.eval_queries));
    }
    corpus::CleanBatchResult cleaned =
        corpus::clean_batch(records, cfg.corpus_cfg.rules, cfg.corpus_cfg.dedupe_threshold,
                            leakage ? &*leakage : nullptr, cfg.corpus_cfg.leakage_threshold);

    // Optional SFT mixing. Items tagged sft skip generation and filtering.
    std::vector<corpus::MixedItem> mixed;
    if (!cfg.paths.sft.empty() && cfg.corpus_cfg.sft_ratio > 0.0) {
        const auto sft = detail::read_sft_queries(cfg.paths.sft, cfg.corpus_cfg.rules);
        mixed = corpus::mix_sft(cleaned.queries, sft, cfg.corpus_cfg.sft_ratio, cfg.seed);
    } else {
        for (const auto& q : cleaned.queries) mixed.push_back({corpus::MixRole::ptr, q});
    }

    const generation::IclTemplate tmpl = detail::load_icl_template(cfg);

    // Generation, parallel across samples, results slotted by index.
    std::vector<std::size_t> ptr_indices;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
        if (mixed[i].role == corpus::MixRole::ptr) ptr_indices.push_back(i);
    }
    std::vector<generation::Candidate> candidates(ptr_indices.size());
    parallel_for(ptr_indices.size(), cfg.jobs, [&](std::size_t slot) {
        const corpus::Query& q = mixed[ptr_indices[slot]].query;
        try {
            provider::GenerationParams weak_params = cfg.generation_cfg.params;
            weak_params.seed = mix64(cfg.seed, fnv1a64(q.id));
            generation::ThoughtSequence thoughts = generation::generate_thoughts(
                q, cfg.weak, cfg.generation_cfg.attempts, weak_params, client);
            provider::GenerationParams strong_params = cfg.generation_cfg.strong_params;
            strong_params.seed = mix64(cfg.seed, mix64(fnv1a64(q.id)));
            generation::RefinedAnswer answer =
                generation::refine_answer(q, thoughts, cfg.strong, strong_params, client, tmpl);
            candidates[slot] = {q, std::move(thoughts), std::move(answer)};
        } catch (const provider::ProviderError& e) {
            throw provider::ProviderError(
                e.kind(), "generation stage, item " + q.id + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("generation stage, item " + q.id + ": " + e.what());
        } catch (const Error& e) {
            throw ContractError("generation stage, item " + q.id + ": " + e.what());
        }
    });

    consistency::Embedder embedder(client, cfg.embed);
    consistency::FilterResult filtered;
    try {
        filtered = consistency::filter_samples(candidates, cfg.consistency_cfg, embedder);
    } catch (const provider::ProviderError& e) {
        throw provider::ProviderError(e.kind(), std::string("consistency stage: ") + e.what());
    }

    // Emit training examples in mixed order; dropped samples just disappear.
    std::map<std::string, const consistency::ScoredCandidate*> kept_by_id;
    for (const auto& sc : filtered.kept) kept_by_id[sc.candidate.query.id] = &sc;
    std::vector<dataset::TrainingExample> examples;
    std::size_t sft_items = 0;
    for (const auto& item : mixed) {
        if (item.role == corpus::MixRole::sft) {
            examples.push_back(dataset::make_sft_example(item.query, cfg.dataset_cfg.answer_weight));
            ++sft_items;
            continue;
        }
        auto it = kept_by_id.find(item.query.id);
        if (it == kept_by_id.end()) continue;
        const auto& sc = *it->second;
        dataset::PtrSample sample =
            dataset::assemble(sc.candidate.query, sc.candidate.thoughts, sc.candidate.answer, sc.score);
        examples.push_back(dataset::to_training_example(sample, cfg.dataset_cfg.instruction,
                                                        cfg.dataset_cfg.answer_weight));
    }

    // Outputs.
    const std::filesystem::path out_dir(cfg.paths.output_dir);
    std::filesystem::create_directories(out_dir);
    {
        std::vector<json> rows;
        for (const auto& q : cleaned.queries) rows.push_back(io::query_to_json(q));
        io::write_jsonl((out_dir / "queries.jsonl").string(), rows);
    }
    io::write_text((out_dir / "clean_report.json").string(),
                   io::clean_report_to_json(cleaned.report).dump(2) + "\n");
    {
        std::vector<json> rows;
        for (const auto& c : candidates) rows.push_back(io::candidate_to_json(c));
        io::write_jsonl((out_dir / "candidates.jsonl").string(), rows);
    }
    {
        std::vector<json> rows;
        for (const auto& sc : filtered.kept) {
            rows.push_back(io::audit_row_to_json(sc.candidate.query.id, sc.score));
        }
        for (const auto& sc : filtered.dropped) {
            rows.push_back(io::audit_row_to_json(sc.candidate.query.id, sc.score));
        }
        io::write_jsonl((out_dir / "filter_audit.jsonl").string(), rows);
    }
    io::write_text((out_dir / "train.jsonl").string(), dataset::serialize(examples));

    BuildResult result;
    result.clean_report = cleaned.report;
    result.sft_items = sft_items;
    result.candidates = candidates.size();
    result.kept = filtered.kept.size();
    result.dropped = filtered.dropped.size();
    result.training_examples = examples.size();
    result.output_dir = out_dir.string();

    const json manifest = {
        {"config_hash", config::config_hash(cfg)},
        {"consistency", config::pipeline_config_to_json(cfg).at("consistency")},
        {"counts",
         {{"input_records", records.size()},
          {"rejected_empty", cleaned.report.rejected_empty},
          {"rejected_noise", cleaned.report.rejected_noise},
          {"deduped", cleaned.report.deduped},
          {"leaked", cleaned.report.leaked},
          {"queries", cleaned.report.kept},
          {"sft_items", sft_items},
          {"candidates", result.candidates},
          {"kept", result.kept},
          {"dropped", result.dropped},
          {"training_examples", result.training_examples}}},
        {"outputs",
         {{"queries", "queries.jsonl"},
          {"clean_report", "clean_report.json"},
          {"candidates", "candidates.jsonl"},
          {"filter_audit", "filter_audit.jsonl"},
          {"train", "train.jsonl"}}},
    };
    result.manifest_path = (out_dir / "manifest.json").string();
    io::write_text(result.manifest_path, manifest.dump(2) + "\n");
    return result;
}

// Standalone cleaning: raw records in, queries + report out.
inline corpus::CleanBatchResult cmd_clean(const config::PipelineConfig& cfg) {
    if (cfg.paths.input.empty()) throw ConfigError("paths.input is required for clean");
    const auto records = io::read_raw_records(cfg.paths.input);
    std::optional<corpus::LeakageIndex> leakage;
    if (!cfg.paths.eval_queries.empty()) {
        leakage = corpus::build_leakage_index(detail::read_eval_query_texts(cfg.paths.eval_queries));
    }
    corpus::CleanBatchResult cleaned =
        corpus::clean_batch(records, cfg.corpus_cfg.rules, cfg.corpus_cfg.dedupe_threshold,
                            leakage ? &*leakage : nullptr, cfg.corpus_cfg.leakage_threshold);
    const std::filesystem::path out_dir(cfg.paths.output_dir);
    std::filesystem::create_directories(out_dir);
    std::vector<json> rows;
    for (const auto& q : cleaned.queries) rows.push_back(io::query_to_json(q));
    io::write_jsonl((out_dir / "queries.jsonl").string(), rows);
    io::write_text((out_dir / "clean_report.json").string(),
                   io::clean_report_to_json(cleaned.report).dump(2) + "\n");
    return cleaned;
}

// Re-masks an existing candidates manifest into training examples, rerunning
// the consistency filter with the current settings.
struct EmitTrainResult {
    std::size_t kept = 0;
    std::size_t dropped = 0;
};

inline EmitTrainResult cmd_emit_train(const config::PipelineConfig& cfg,
                                      const std::string& candidates_path,
                                      const std::string& train_out,
                                      provider::Client* injected_client = nullptr) {
    provider::Client own_client(nullptr, cfg.provider_cfg.retry_policy());
    provider::Client& client = injected_client ? *injected_client : own_client;
    std::vector<generation::Candidate> candidates;
    for (const auto& row : io::read_jsonl_rows(candidates_path)) {
        candidates.push_back(io::candidate_from_json(row.value, row.line));
    }
    consistency::Embedder embedder(client, cfg.embed);
    consistency::FilterResult filtered =
        consistency::filter_samples(candidates, cfg.consistency_cfg, embedder);
    std::vector<dataset::TrainingExample> examples;
    for (const auto& sc : filtered.kept) {
        dataset::PtrSample sample =
            dataset::assemble(sc.candidate.query, sc.candidate.thoughts, sc.candidate.answer, sc.score);
        examples.push_back(dataset::to_training_example(sample, cfg.dataset_cfg.instruction,
                                                        cfg.dataset_cfg.answer_weight));
    }
    io::write_text(train_out, dataset::serialize(examples));
    return {filtered.kept.size(), filtered.dropped.size()};
}

// ---- validate-separation ----------------------------------------------------

struct SeparationRow {
    std::string task;
    stats::WilcoxonResult result;
};

// Reads paired score rows {item_id, weak, strong, task?} and runs the
// signed-rank test per task (alternative: strong > weak).
inline std::vector<SeparationRow> cmd_validate_separation(const std::string& scores_path) {
    std::map<std::string, stats::PairedScores> by_task;
    std::vector<std::string> task_order;
    for (const auto& [line_no, row] : io::read_jsonl_rows(scores_path)) {
        if (!row.contains("weak") || !row.contains("strong")) {
            throw ParseError(line_no, "weak/strong", "missing paired scores");
        }
        const std::string task = row.value("task", std::string("all"));
        if (!by_task.count(task)) task_order.push_back(task);
        by_task[task].weak.push_back(row.at("weak").get<double>());
        by_task[task].strong.push_back(row.at("strong").get<double>());
    }
    if (by_task.empty()) throw ContractError("no paired scores found in " + scores_path);
    std::vector<SeparationRow> rows;
    for (const auto& task : task_order) {
        rows.push_back({task, stats::wilcoxon_signed_rank(by_task[task], stats::Alternative::greater)});
    }
    return rows;
}

// Table layout mirrors the separation-validation report: one row per task
// with n, W+, the statistic, p and a 0.05 significance verdict.
inline std::string format_separation_table(const std::vector<SeparationRow>& rows) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s %6s %10s %12s %12s  %s\n", "Task", "n", "W+",
                  "z/method", "p-value", "Significance");
    out += buf;
    for (const auto& row : rows) {
        const auto& r = row.result;
        std::string stat = r.z ? [&] {
            char zs[32];
            std::snprintf(zs, sizeof(zs), "%.3f", *r.z);
            return std::string(zs);
        }()
                               : std::string("exact");
        std::snprintf(buf, sizeof(buf), "%-16s %6zu %10.1f %12s %12.6g  %s\n", row.task.c_str(),
                      r.n_effective, r.w_plus, stat.c_str(), r.p_value,
                      r.p_value < 0.05 ? "Significant" : "Not significant");
        out += buf;
    }
    return out;
}

// ---- loss-check --------------------------------------------------------------

struct LossCase {
    loss::StepProbabilities p;
    loss::ConsistencyValues c;
    loss::LossConfig cfg;
};

struct LossCheckResult {
    std::vector<std::pair<LossCase, loss::LossBreakdown>> cases;
    double max_grad_error = 0.0;
    double grad_tolerance = 1e-4;
    bool ok = true;
};

inline LossCase loss_case_from_json(const json& j, std::size_t index) {
    LossCase c;
    try {
        c.p.p = j.at("p").get<std::vector<double>>();
        if (j.contains("c")) c.c.c = j.at("c").get<std::vector<double>>();
        if (j.contains("lambdas")) {
            const auto l = j.at("lambdas").get<std::vector<double>>();
            if (l.size() != 3) throw ConfigError("lambdas must have 3 entries");
            c.cfg.lambda1 = l[0];
            c.cfg.lambda2 = l[1];
            c.cfg.lambda3 = l[2];
        }
        if (j.contains("beta")) {
            if (j.at("beta").is_array()) {
                c.cfg.beta_kind = loss::BetaKind::custom;
                c.cfg.beta_custom = j.at("beta").get<std::vector<double>>();
            } else {
                c.cfg.beta_kind = loss::beta_kind_from_string(j.at("beta").get<std::string>());
            }
        }
        c.cfg.literal_consistency_sign = j.value("literal_sign", false);
    } catch (const json::exception& e) {
        throw ParseError(index + 1, "case", e.what());
    }
    return c;
}

// Random desk-scale instance used by the gradient-check battery.
struct RandomLossInstance {
    loss::ToyModel model;
    loss::ConsistencyValues cons;
    loss::LossConfig cfg;
};

inline RandomLossInstance make_random_loss_instance(Rng& rng, std::size_t max_steps = 5,
                                                    std::size_t max_vocab = 8) {
    RandomLossInstance inst;
    const std::size_t steps = 1 + rng.bounded(max_steps);
    for (std::size_t t = 0; t < steps; ++t) {
        loss::ToyStep step;
        const std::size_t positions = 1 + rng.bounded(2);
        for (std::size_t j = 0; j < positions; ++j) {
            const std::size_t vocab = 2 + rng.bounded(max_vocab - 1);
            std::vector<double> logits(vocab);
            for (auto& z : logits) z = rng.uniform01() * 6.0 - 3.0;
            step.logits.push_back(std::move(logits));
            step.labels.push_back(static_cast<int>(rng.bounded(vocab)));
        }
        inst.model.steps.push_back(std::move(step));
    }
    for (std::size_t t = 1; t < steps; ++t) inst.cons.c.push_back(rng.uniform01());
    double l1 = 0.1 + rng.uniform01();
    double l2 = 0.1 + rng.uniform01();
    double l3 = 0.1 + rng.uniform01();
    const double sum = l1 + l2 + l3;
    inst.cfg.lambda1 = l1 / sum;
    inst.cfg.lambda2 = l2 / sum;
    // Make the weights sum to 1 exactly in floating point.
    inst.cfg.lambda3 = 1.0 - inst.cfg.lambda1 - inst.cfg.lambda2;
    inst.cfg.beta_kind = rng.bounded(2) ? loss::BetaKind::linear : loss::BetaKind::uniform;
    inst.cfg.literal_consistency_sign = rng.bounded(2) == 1;
    return inst;
}

// Evaluates the case file and runs the finite-difference battery; a result
// with ok == false means some gradient exceeded the tolerance.
inline LossCheckResult cmd_loss_check(const std::string& cases_path) {
    const json root = config::load_config_file(cases_path);
    LossCheckResult result;
    json cases = root.is_array() ? root : root.value("cases", json::array());
    std::size_t grad_instances = 100;
    double eps = 1e-6;
    std::uint64_t seed = 20240501;
    if (root.is_object() && root.contains("grad_check")) {
        const auto& g = root.at("grad_check");
        grad_instances = g.value("instances", grad_instances);
        eps = g.value("eps", eps);
        result.grad_tolerance = g.value("tolerance", result.grad_tolerance);
        seed = g.value("seed", seed);
    }
    std::size_t index = 0;
    for (const auto& cj : cases) {
        LossCase c = loss_case_from_json(cj, index++);
        result.cases.emplace_back(c, loss::ptr_loss(c.p, c.c, c.cfg));
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < grad_instances; ++i) {
        RandomLossInstance inst = make_random_loss_instance(rng);
        result.max_grad_error =
            std::max(result.max_grad_error, loss::grad_check(inst.model, inst.cons, inst.cfg, eps));
    }
    result.ok = result.max_grad_error <= result.grad_tolerance;
    return result;
}

}  // namespace ptr::pipeline
