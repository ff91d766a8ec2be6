#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptr/consistency.hpp"
#include "ptr/corpus.hpp"
#include "ptr/generation.hpp"
#include "ptr/refine.hpp"
#include "ptr/util.hpp"

namespace ptr::io {

using json = nlohmann::json;

struct JsonRow {
    std::size_t line = 0;  // 1-based position in the file
    json value;
};

inline std::vector<JsonRow> read_jsonl_rows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::vector<JsonRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            rows.push_back({line_no, json::parse(line)});
        } catch (const json::exception& e) {
            throw ParseError(line_no, "<line>", std::string("invalid JSON: ") + e.what());
        }
    }
    return rows;
}

inline std::vector<json> read_jsonl(const std::string& path) {
    std::vector<json> rows;
    for (auto& row : read_jsonl_rows(path)) rows.push_back(std::move(row.value));
    return rows;
}

inline void write_text(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& rows) {
    std::string content;
    for (const auto& row : rows) {
        content += row.dump();
        content.push_back('\n');
    }
    write_text(path, content);
}

// ---- row converters -------------------------------------------------------

inline corpus::RawRecord raw_record_from_json(const json& j, std::size_t line_no) {
    corpus::RawRecord rec;
    if (!j.contains("id") || !j.at("id").is_string() || j.at("id").get<std::string>().empty()) {
        throw ParseError(line_no, "id", "missing or empty");
    }
    if (!j.contains("text") || !j.at("text").is_string()) {
        throw ParseError(line_no, "text", "missing");
    }
    rec.id = j.at("id").get<std::string>();
    rec.text = j.at("text").get<std::string>();
    if (j.contains("answer") && j.at("answer").is_string()) {
        rec.answer = j.at("answer").get<std::string>();
    }
    rec.source = j.value("source", std::string());
    return rec;
}

inline std::vector<corpus::RawRecord> read_raw_records(const std::string& path) {
    std::vector<corpus::RawRecord> records;
    std::unordered_set<std::string> seen_ids;
    for (const auto& row : read_jsonl_rows(path)) {
        records.push_back(raw_record_from_json(row.value, row.line));
        if (!seen_ids.insert(records.back().id).second) {
            throw ParseError(row.line, "id", "duplicate record id: " + records.back().id);
        }
    }
    return records;
}

inline json query_to_json(const corpus::Query& q) {
    json j = {{"id", q.id}, {"text", q.text}, {"source", q.source}};
    if (q.sft_answer) j["sft_answer"] = *q.sft_answer;
    return j;
}

inline corpus::Query query_from_json(const json& j, std::size_t line_no) {
    corpus::Query q;
    if (!j.contains("id")) throw ParseError(line_no, "id", "missing");
    if (!j.contains("text")) throw ParseError(line_no, "text", "missing");
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    q.source = j.value("source", std::string());
    if (j.contains("sft_answer")) q.sft_answer = j.at("sft_answer").get<std::string>();
    return q;
}

inline json clean_report_to_json(const corpus::CleanReport& r) {
    return {{"kept", r.kept},
            {"rejected_empty", r.rejected_empty},
            {"rejected_noise", r.rejected_noise},
            {"deduped", r.deduped},
            {"leaked", r.leaked},
            {"total", r.total()}};
}

inline json candidate_to_json(const generation::Candidate& c) {
    json thoughts = json::array();
    for (const auto& t : c.thoughts.thoughts) {
        thoughts.push_back({{"text", t.text}, {"attempt", t.attempt}, {"producer", t.producer}});
    }
    return {{"query_id", c.query.id},
            {"query", query_to_json(c.query)},
            {"thoughts", thoughts},
            {"answer",
             {{"text", c.answer.text},
              {"producer", c.answer.producer},
              {"icl_prompt", c.answer.icl_prompt}}}};
}

inline generation::Candidate candidate_from_json(const json& j, std::size_t line_no) {
    generation::Candidate c;
    try {
        c.query = query_from_json(j.at("query"), line_no);
        c.thoughts.query_id = j.at("query_id").get<std::string>();
        for (const auto& t : j.at("thoughts")) {
            c.thoughts.thoughts.push_back({t.at("text").get<std::string>(),
                                           t.at("attempt").get<int>(),
                                           t.value("producer", std::string()), std::string()});
        }
        c.answer.text = j.at("answer").at("text").get<std::string>();
        c.answer.producer = j.at("answer").value("producer", std::string());
        c.answer.icl_prompt = j.at("answer").value("icl_prompt", std::string());
        c.thoughts.validate();
    } catch (const json::exception& e) {
        throw ParseError(line_no, "candidate", e.what());
    }
    return c;
}

inline json audit_row_to_json(const std::string& query_id, const consistency::ConsistencyScore& s) {
    return {{"query_id", query_id},
            {"per_thought", s.per_thought},
            {"c_value", s.c_value},
            {"kept", s.kept}};
}

inline json session_to_json(const refine::RefineSession& s) {
    json traces = json::array();
    for (const auto& t : s.traces) {
        traces.push_back({{"iteration", t.iteration},
                          {"prompt", t.prompt},
                          {"response", t.response},
                          {"extracted", t.extracted},
                          {"extraction_warned", t.extraction_warned},
                          {"temperature", t.temperature}});
    }
    json j = {{"query_id", s.query_id},
              {"traces", traces},
              {"final", s.final_answer},
              {"aborted", s.aborted},
              {"stopped_on_fixpoint", s.stopped_on_fixpoint}};
    if (s.aborted) j["error"] = s.error;
    return j;
}

}  // namespace ptr::io
