#pragma once

#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptr/consistency.hpp"
#include "ptr/corpus.hpp"
#include "ptr/loss.hpp"
#include "ptr/provider.hpp"
#include "ptr/util.hpp"

namespace ptr::config {

using json = nlohmann::json;

namespace toml {

// Minimal TOML reader covering what run configs need: [tables], [[arrays of
// tables]], dotted table names, and key = value with strings, integers,
// floats, booleans and flat arrays. Comments start with '#'.
//
// No external TOML library ships in this environment, so this subset is
// parsed by hand; anything richer should use the JSON form of the config.

namespace detail {

inline void fail(std::size_t line, const std::string& msg) {
    throw ConfigError("toml line " + std::to_string(line) + ": " + msg);
}

inline json parse_scalar(const std::string& raw, std::size_t line) {
    std::string v = text::trim(raw);
    if (v.empty()) fail(line, "empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') fail(line, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            char c = v[i];
            if (c == '\\' && i + 2 < v.size()) {
                ++i;
                switch (v[i]) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case 'r': c = '\r'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(line, "unsupported escape");
                }
            }
            out.push_back(c);
        }
        return json(out);
    }
    if (v == "true") return json(true);
    if (v == "false") return json(false);
    try {
        if (v.find_first_of(".eE") != std::string::npos) {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) fail(line, "bad number: " + v);
            return json(d);
        }
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) fail(line, "bad integer: " + v);
        return json(i);
    } catch (const std::exception&) {
        fail(line, "cannot parse value: " + v);
    }
    return json();
}

inline json parse_value(const std::string& raw, std::size_t line) {
    std::string v = text::trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') fail(line, "unterminated array");
        json arr = json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string item;
        bool in_string = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            const char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!text::trim(item).empty()) arr.push_back(parse_scalar(item, line));
                item.clear();
            } else {
                item.push_back(c);
            }
        }
        if (!text::trim(item).empty()) arr.push_back(parse_scalar(item, line));
        return arr;
    }
    return parse_scalar(v, line);
}

inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline std::vector<std::string> split_dotted(const std::string& name, std::size_t line) {
    std::vector<std::string> parts;
    std::string part;
    for (char c : name) {
        if (c == '.') {
            if (part.empty()) fail(line, "empty table name segment");
            parts.push_back(text::trim(part));
            part.clear();
        } else {
            part.push_back(c);
        }
    }
    if (text::trim(part).empty()) fail(line, "empty table name segment");
    parts.push_back(text::trim(part));
    return parts;
}

}  // namespace detail

inline json parse(const std::string& content) {
    json root = json::object();
    json* current = &root;
    std::istringstream in(content);
    std::string raw_line;
    std::size_t line_no = 0;
    while (std::getline(in, raw_line)) {
        ++line_no;
        std::string line = text::trim(detail::strip_comment(raw_line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            const bool array_table = line.rfind("[[", 0) == 0;
            const std::string closer = array_table ? "]]" : "]";
            if (line.substr(line.size() - closer.size()) != closer) {
                detail::fail(line_no, "unterminated table header");
            }
            const std::size_t open = array_table ? 2 : 1;
            const std::string name =
                text::trim(line.substr(open, line.size() - open - closer.size()));
            if (name.empty()) detail::fail(line_no, "empty table name");
            json* node = &root;
            const auto parts = detail::split_dotted(name, line_no);
            for (std::size_t i = 0; i < parts.size(); ++i) {
                const bool last = i + 1 == parts.size();
                if (last && array_table) {
                    if (!node->contains(parts[i])) (*node)[parts[i]] = json::array();
                    (*node)[parts[i]].push_back(json::object());
                    node = &(*node)[parts[i]].back();
                } else {
                    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
                    node = &(*node)[parts[i]];
                    if (node->is_array()) node = &node->back();
                }
            }
            current = node;
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) detail::fail(line_no, "expected key = value");
        const std::string key = text::trim(line.substr(0, eq));
        if (key.empty()) detail::fail(line_no, "empty key");
        (*current)[key] = detail::parse_value(line.substr(eq + 1), line_no);
    }
    return root;
}

}  // namespace toml

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Loads a config file as JSON, dispatching on the extension (.toml vs .json).
inline json load_config_file(const std::string& path) {
    const std::string content = read_file(path);
    const bool is_toml = path.size() >= 5 && path.substr(path.size() - 5) == ".toml";
    if (is_toml) return toml::parse(content);
    try {
        return json::parse(content);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
}

struct PathsConfig {
    std::string input;
    std::string output_dir = "out";
    std::string eval_queries;  // optional leakage screen source
    std::string sft;           // optional SFT pair source
    std::string icl_template;  // optional ICL template file
};

struct CorpusConfig {
    corpus::CleaningRules rules;
    double dedupe_threshold = 0.9;
    double leakage_threshold = 0.5;
    double sft_ratio = 0.2;  // applies only when an SFT source is configured
};

struct GenerationConfig {
    int attempts = 2;  // thought attempts per query
    provider::GenerationParams params{0.8, 256, 1, {}, std::nullopt};
    provider::GenerationParams strong_params{0.0, 512, 1, {}, std::nullopt};
};

struct DatasetConfig {
    std::string instruction = generation::kRefineInstruction;
    double answer_weight = 1.0;
};

struct ProviderConfig {
    int max_attempts = 5;
    int base_delay_ms = 500;
    double backoff_factor = 2.0;

    void validate() const {
        if (max_attempts < 1) throw ConfigError("provider.max_attempts must be >= 1");
        if (base_delay_ms < 0) throw ConfigError("provider.base_delay_ms must be >= 0");
        if (backoff_factor < 1.0) throw ConfigError("provider.backoff_factor must be >= 1");
    }

    provider::RetryPolicy retry_policy() const {
        provider::RetryPolicy rp;
        rp.max_attempts = max_attempts;
        rp.base_delay = std::chrono::milliseconds(base_delay_ms);
        rp.factor = backoff_factor;
        return rp;
    }
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    PathsConfig paths;
    CorpusConfig corpus_cfg;
    GenerationConfig generation_cfg;
    std::vector<provider::ModelEndpoint> weak;
    provider::ModelEndpoint strong;
    provider::ModelEndpoint embed;
    std::optional<provider::ModelEndpoint> judge;
    consistency::ConsistencyConfig consistency_cfg;
    loss::LossConfig loss_cfg;
    DatasetConfig dataset_cfg;
    ProviderConfig provider_cfg;

    void validate() const {
        provider_cfg.validate();
        if (weak.empty()) throw ConfigError("at least one weak endpoint is required");
        for (const auto& e : weak) e.validate();
        strong.validate();
        embed.validate();
        if (judge) judge->validate();
        consistency_cfg.validate();
        loss_cfg.validate();
        if (generation_cfg.attempts < 1) throw ConfigError("generation.attempts must be >= 1");
        generation_cfg.params.validate();
        generation_cfg.strong_params.validate();
        if (dataset_cfg.instruction.empty()) throw ConfigError("dataset.instruction is empty");
        if (dataset_cfg.answer_weight <= 0.0) throw ConfigError("dataset.answer_weight must be > 0");
        if (corpus_cfg.sft_ratio < 0.0 || corpus_cfg.sft_ratio > 1.0) {
            throw ConfigError("corpus.sft_ratio must lie in [0,1]");
        }
    }
};

namespace detail {

inline provider::ModelEndpoint endpoint_from_json(const json& j, provider::Role role) {
    provider::ModelEndpoint e;
    e.role = role;
    if (!j.contains("base_url")) throw ConfigError("endpoint is missing base_url");
    e.base_url = j.at("base_url").get<std::string>();
    e.model_name = j.value("model_name", std::string("default"));
    e.api_key_env = j.value("api_key_env", std::string());
    e.max_in_flight = j.value("max_in_flight", 4);
    e.validate();
    return e;
}

inline json endpoint_to_json(const provider::ModelEndpoint& e) {
    return {{"base_url", e.base_url},
            {"model_name", e.model_name},
            {"api_key_env", e.api_key_env},
            {"max_in_flight", e.max_in_flight}};
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig cfg;
    try {
        cfg.seed = j.value("seed", 0ull);
        cfg.jobs = j.value("jobs", 1u);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            cfg.paths.input = p.value("input", std::string());
            cfg.paths.output_dir = p.value("output_dir", std::string("out"));
            cfg.paths.eval_queries = p.value("eval_queries", std::string());
            cfg.paths.sft = p.value("sft", std::string());
            cfg.paths.icl_template = p.value("icl_template", std::string());
        }
        if (j.contains("corpus")) {
            const auto& c = j.at("corpus");
            cfg.corpus_cfg.rules.min_tokens = c.value("min_tokens", std::size_t(3));
            cfg.corpus_cfg.dedupe_threshold = c.value("dedupe_threshold", 0.9);
            cfg.corpus_cfg.leakage_threshold = c.value("leakage_threshold", 0.5);
            cfg.corpus_cfg.sft_ratio = c.value("sft_ratio", 0.2);
        }
        if (j.contains("generation")) {
            const auto& g = j.at("generation");
            cfg.generation_cfg.attempts = g.value("attempts", 2);
            cfg.generation_cfg.params.temperature = g.value("temperature", 0.8);
            cfg.generation_cfg.params.max_tokens = g.value("max_tokens", 256);
            cfg.generation_cfg.params.n_samples = g.value("n_samples", 1);
            cfg.generation_cfg.strong_params.temperature = g.value("strong_temperature", 0.0);
            cfg.generation_cfg.strong_params.max_tokens = g.value("strong_max_tokens", 512);
        }
        if (!j.contains("weak") || !j.at("weak").is_array() || j.at("weak").empty()) {
            throw ConfigError("config requires a nonempty [[weak]] endpoint list");
        }
        for (const auto& w : j.at("weak")) {
            cfg.weak.push_back(detail::endpoint_from_json(w, provider::Role::weak));
        }
        if (!j.contains("strong")) throw ConfigError("config requires a [strong] endpoint");
        cfg.strong = detail::endpoint_from_json(j.at("strong"), provider::Role::strong);
        if (!j.contains("embed")) throw ConfigError("config requires an [embed] endpoint");
        cfg.embed = detail::endpoint_from_json(j.at("embed"), provider::Role::embed);
        if (j.contains("judge")) {
            cfg.judge = detail::endpoint_from_json(j.at("judge"), provider::Role::judge);
        }
        if (j.contains("consistency")) {
            const auto& c = j.at("consistency");
            cfg.consistency_cfg.alpha1 = c.value("alpha1", 0.3);
            cfg.consistency_cfg.alpha2 = c.value("alpha2", 0.7);
            cfg.consistency_cfg.ngram_order = c.value("ngram_order", 2);
            cfg.consistency_cfg.delta = c.value("delta", 0.5);
            cfg.consistency_cfg.kappa = c.value("kappa", 0.5);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            cfg.loss_cfg.lambda1 = l.value("lambda1", 0.8);
            cfg.loss_cfg.lambda2 = l.value("lambda2", 0.1);
            cfg.loss_cfg.lambda3 = l.value("lambda3", 0.1);
            if (l.contains("beta")) {
                if (l.at("beta").is_array()) {
                    cfg.loss_cfg.beta_kind = loss::BetaKind::custom;
                    cfg.loss_cfg.beta_custom = l.at("beta").get<std::vector<double>>();
                } else {
                    cfg.loss_cfg.beta_kind =
                        loss::beta_kind_from_string(l.at("beta").get<std::string>());
                }
            }
            cfg.loss_cfg.literal_consistency_sign =
                l.value("literal_consistency_sign", false);
        }
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            cfg.dataset_cfg.instruction =
                d.value("instruction", std::string(generation::kRefineInstruction));
            cfg.dataset_cfg.answer_weight = d.value("answer_weight", 1.0);
        }
        if (j.contains("provider")) {
            const auto& p = j.at("provider");
            cfg.provider_cfg.max_attempts = p.value("max_attempts", 5);
            cfg.provider_cfg.base_delay_ms = p.value("base_delay_ms", 500);
            cfg.provider_cfg.backoff_factor = p.value("backoff_factor", 2.0);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// Canonical (effective) config rendering; the manifest records its hash so a
// run is reproducible from (config, seed) alone.
inline json pipeline_config_to_json(const PipelineConfig& cfg) {
    json weak = json::array();
    for (const auto& w : cfg.weak) weak.push_back(detail::endpoint_to_json(w));
    json j = {
        {"seed", cfg.seed},
        {"jobs", cfg.jobs},
        {"paths",
         {{"input", cfg.paths.input},
          {"output_dir", cfg.paths.output_dir},
          {"eval_queries", cfg.paths.eval_queries},
          {"sft", cfg.paths.sft},
          {"icl_template", cfg.paths.icl_template}}},
        {"corpus",
         {{"min_tokens", cfg.corpus_cfg.rules.min_tokens},
          {"dedupe_threshold", cfg.corpus_cfg.dedupe_threshold},
          {"leakage_threshold", cfg.corpus_cfg.leakage_threshold},
          {"sft_ratio", cfg.corpus_cfg.sft_ratio}}},
        {"generation",
         {{"attempts", cfg.generation_cfg.attempts},
          {"temperature", cfg.generation_cfg.params.temperature},
          {"max_tokens", cfg.generation_cfg.params.max_tokens},
          {"n_samples", cfg.generation_cfg.params.n_samples},
          {"strong_temperature", cfg.generation_cfg.strong_params.temperature},
          {"strong_max_tokens", cfg.generation_cfg.strong_params.max_tokens}}},
        {"weak", weak},
        {"strong", detail::endpoint_to_json(cfg.strong)},
        {"embed", detail::endpoint_to_json(cfg.embed)},
        {"consistency",
         {{"alpha1", cfg.consistency_cfg.alpha1},
          {"alpha2", cfg.consistency_cfg.alpha2},
          {"ngram_order", cfg.consistency_cfg.ngram_order},
          {"delta", cfg.consistency_cfg.delta},
          {"kappa", cfg.consistency_cfg.kappa}}},
        {"loss",
         {{"lambda1", cfg.loss_cfg.lambda1},
          {"lambda2", cfg.loss_cfg.lambda2},
          {"lambda3", cfg.loss_cfg.lambda3},
          {"beta", to_string(cfg.loss_cfg.beta_kind)},
          {"beta_custom", cfg.loss_cfg.beta_custom},
          {"literal_consistency_sign", cfg.loss_cfg.literal_consistency_sign}}},
        {"dataset",
         {{"instruction", cfg.dataset_cfg.instruction},
          {"answer_weight", cfg.dataset_cfg.answer_weight}}},
        {"provider",
         {{"max_attempts", cfg.provider_cfg.max_attempts},
          {"base_delay_ms", cfg.provider_cfg.base_delay_ms},
          {"backoff_factor", cfg.provider_cfg.backoff_factor}}},
    };
    if (cfg.judge) j["judge"] = detail::endpoint_to_json(*cfg.judge);
    return j;
}

inline std::string config_hash(const PipelineConfig& cfg) {
    const std::uint64_t h = fnv1a64(pipeline_config_to_json(cfg).dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    return pipeline_config_from_json(load_config_file(path));
}

}  // namespace ptr::config
