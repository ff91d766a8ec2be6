#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "ptr/config.hpp"
#include "ptr/jsonl.hpp"

using namespace ptr;
using namespace ptr::config;

namespace {

const char* kTomlConfig = R"(# pipeline run config
seed = 42
jobs = 2

[paths]
input = "raw.jsonl"
output_dir = "out"

[corpus]
min_tokens = 3
dedupe_threshold = 0.9
sft_ratio = 0.0

[generation]
attempts = 2
temperature = 0.8

[[weak]]
base_url = "mock:1"
model_name = "weak-a"

[[weak]]
base_url = "mock:2"
model_name = "weak-b"

[strong]
base_url = "mock:3"
model_name = "strong"

[embed]
base_url = "mock:4"
model_name = "embedder"

[consistency]
alpha1 = 0.3
alpha2 = 0.7
delta = 0.5
kappa = 0.5

[loss]
lambda1 = 0.8
lambda2 = 0.1
lambda3 = 0.1
beta = "linear"

[dataset]
answer_weight = 1.0
)";

}  // namespace

TEST_CASE("toml subset parses tables, arrays-of-tables and scalars") {
    auto j = toml::parse(kTomlConfig);
    CHECK(j.at("seed").get<int>() == 42);
    CHECK(j.at("paths").at("input").get<std::string>() == "raw.jsonl");
    REQUIRE(j.at("weak").is_array());
    REQUIRE(j.at("weak").size() == 2);
    CHECK(j.at("weak")[1].at("model_name").get<std::string>() == "weak-b");
    CHECK(j.at("consistency").at("alpha2").get<double>() == 0.7);
}

TEST_CASE("toml subset handles strings, bools, arrays and comments") {
    auto j = toml::parse(
        "title = \"a \\\"quoted\\\" name\"  # trailing comment\n"
        "flag = true\n"
        "vals = [0.1, 0.2, 0.7]\n"
        "n = -3\n");
    CHECK(j.at("title").get<std::string>() == "a \"quoted\" name");
    CHECK(j.at("flag").get<bool>() == true);
    CHECK(j.at("vals").get<std::vector<double>>() == std::vector<double>{0.1, 0.2, 0.7});
    CHECK(j.at("n").get<int>() == -3);
}

TEST_CASE("toml subset rejects malformed input with line numbers") {
    CHECK_THROWS_AS(toml::parse("key value\n"), ConfigError);
    CHECK_THROWS_AS(toml::parse("[unclosed\n"), ConfigError);
    CHECK_THROWS_AS(toml::parse("s = \"open\n"), ConfigError);
    try {
        toml::parse("ok = 1\nbad line here\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("pipeline config loads from toml and json identically") {
    testutil::TempDir dir("config");
    io::write_text(dir.file("cfg.toml"), kTomlConfig);
    PipelineConfig from_toml = load_pipeline_config(dir.file("cfg.toml"));

    io::write_text(dir.file("cfg.json"), toml::parse(kTomlConfig).dump());
    PipelineConfig from_json = load_pipeline_config(dir.file("cfg.json"));

    CHECK(from_toml.seed == 42);
    CHECK(from_toml.weak.size() == 2);
    CHECK(from_toml.strong.base_url == "mock:3");
    CHECK(from_toml.consistency_cfg.kappa == 0.5);
    CHECK(config_hash(from_toml) == config_hash(from_json));
}

TEST_CASE("config hash changes when any field changes") {
    auto j = toml::parse(kTomlConfig);
    PipelineConfig a = pipeline_config_from_json(j);
    PipelineConfig b = a;
    b.seed = 43;
    CHECK(config_hash(a) != config_hash(b));
    PipelineConfig c = a;
    c.consistency_cfg.kappa = 0.25;
    CHECK(config_hash(a) != config_hash(c));
    CHECK(config_hash(a) == config_hash(pipeline_config_from_json(j)));
}

TEST_CASE("config validation rejects broken setups") {
    auto base = toml::parse(kTomlConfig);

    auto no_weak = base;
    no_weak.erase("weak");
    CHECK_THROWS_AS(pipeline_config_from_json(no_weak), ConfigError);

    auto bad_lambda = base;
    bad_lambda["loss"]["lambda1"] = 0.9;  // sums to 1.1
    CHECK_THROWS_AS(pipeline_config_from_json(bad_lambda), ConfigError);

    auto bad_alpha = base;
    bad_alpha["consistency"]["alpha1"] = 0.9;
    CHECK_THROWS_AS(pipeline_config_from_json(bad_alpha), ConfigError);

    auto bad_endpoint = base;
    bad_endpoint["strong"].erase("base_url");
    CHECK_THROWS_AS(pipeline_config_from_json(bad_endpoint), ConfigError);

    auto bad_ratio = base;
    bad_ratio["corpus"]["sft_ratio"] = 1.5;
    CHECK_THROWS_AS(pipeline_config_from_json(bad_ratio), ConfigError);
}

TEST_CASE("load_config_file dispatches on extension") {
    testutil::TempDir dir("loadcfg");
    io::write_text(dir.file("a.toml"), "x = 1\n");
    io::write_text(dir.file("a.json"), "{\"x\": 1}");
    CHECK(load_config_file(dir.file("a.toml")).at("x").get<int>() == 1);
    CHECK(load_config_file(dir.file("a.json")).at("x").get<int>() == 1);
    CHECK_THROWS_AS(load_config_file(dir.file("missing.json")), ConfigError);
    io::write_text(dir.file("bad.json"), "{not json");
    CHECK_THROWS_AS(load_config_file(dir.file("bad.json")), ConfigError);
}
