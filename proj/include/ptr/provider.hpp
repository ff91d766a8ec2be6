#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptr/text.hpp"
#include "ptr/util.hpp"

namespace ptr::provider {

using json = nlohmann::json;

enum class Role { weak, strong, embed, judge };

inline const char* to_string(Role r) {
    switch (r) {
        case Role::weak: return "weak";
        case Role::strong: return "strong";
        case Role::embed: return "embed";
        case Role::judge: return "judge";
    }
    return "weak";
}

inline Role role_from_string(const std::string& s) {
    if (s == "weak") return Role::weak;
    if (s == "strong") return Role::strong;
    if (s == "embed") return Role::embed;
    if (s == "judge") return Role::judge;
    throw ConfigError("unknown endpoint role: " + s);
}

// Opaque identity of a served model. base_url "mock:<seed>" (or "mock:echo",
// "mock:echo:<seed>") selects the deterministic offline provider.
struct ModelEndpoint {
    Role role = Role::weak;
    std::string base_url;
    std::string model_name;
    std::string api_key_env;
    int max_in_flight = 4;

    bool is_mock() const { return base_url.rfind("mock:", 0) == 0; }

    std::string key() const {
        return std::string(to_string(role)) + "|" + base_url + "|" + model_name;
    }

    void validate() const {
        if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
        if (max_in_flight < 1) throw ConfigError("endpoint max_in_flight must be >= 1");
    }
};

struct GenerationParams {
    double temperature = 0.0;
    int max_tokens = 512;
    int n_samples = 1;
    std::vector<std::string> stop;
    std::optional<std::uint64_t> seed;

    void validate() const {
        if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
        if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
        if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    }
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }

    double norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }
};

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim() || a.dim() == 0) {
        throw ContractError("cosine: dimension mismatch");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) throw ContractError("cosine: zero-norm vector");
    return dot / denom;
}

enum class ProviderErrorKind {
    transport,     // connection failures, 5xx; retried with backoff
    rate_limited,  // 429; retried with backoff
    bad_response,  // schema violation; never retried
    precondition,  // caller violated an input contract
};

class ProviderError : public Error {
public:
    ProviderError(ProviderErrorKind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    ProviderErrorKind kind() const { return kind_; }

    bool retryable() const {
        return kind_ == ProviderErrorKind::transport || kind_ == ProviderErrorKind::rate_limited;
    }

private:
    ProviderErrorKind kind_;
};

struct HttpResult {
    int status = 0;
    std::string body;
};

// Transport seam. Tests inject counting or failing transports here; the
// retry and in-flight machinery above it never changes.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResult post(const ModelEndpoint& endpoint, const std::string& path,
                            const std::string& json_body) = 0;
};

inline constexpr std::size_t kMockEmbeddingDim = 64;

namespace detail {

inline const std::vector<std::string>& mock_vocabulary() {
    static const std::vector<std::string> vocab = {
        "alpha",   "bridge", "candle", "delta",  "ember",  "forest", "glacier", "harbor",
        "ink",     "jungle", "kernel", "lantern", "meadow", "nectar", "orbit",  "prism",
        "quartz",  "river",  "signal", "timber", "umber",  "violet", "willow", "xenon",
        "yonder",  "zephyr", "anchor", "basalt", "cipher", "dune",   "echo",   "fjord",
        "granite", "hollow", "iris",   "jasper", "klaxon", "lumen",  "marble", "north",
        "opal",    "pebble", "quill",  "ridge",  "sable",  "tundra", "updraft", "vessel",
        "wharf",   "xylem",  "yarrow", "zenith", "arc",    "bloom",  "crest",  "drift",
        "flint",   "grove",  "haze",   "knoll",  "ledge",  "mist",   "reef",   "spire",
    };
    return vocab;
}

}  // namespace detail

// Deterministic offline provider speaking the same JSON wire shape as the
// HTTP transport. Three behaviors, checked in order:
//   1. canned table: first entry whose key is a substring of the prompt wins;
//   2. echo: the response is the prompt verbatim;
//   3. hash: pseudo-text drawn from the prompt's tokens plus a fixed
//      vocabulary, a pure function of (seed, prompt, params).
// Temperature 0 ignores the sampling seed and sample index (greedy decoding
// is deterministic); temperature > 0 varies by both.
class MockTransport : public Transport {
public:
    explicit MockTransport(std::uint64_t seed = 0, bool echo = false) : seed_(seed), echo_(echo) {}

    void add_canned(std::string prompt_substring, std::string response) {
        canned_.emplace_back(std::move(prompt_substring), std::move(response));
    }

    HttpResult post(const ModelEndpoint& endpoint, const std::string& path,
                    const std::string& json_body) override {
        json request = json::parse(json_body);
        if (path == "/v1/embeddings") {
            return embed_response(request);
        }
        return complete_response(endpoint, request);
    }

    // Parses "mock:<seed>", "mock:echo" and "mock:echo:<seed>".
    static std::shared_ptr<MockTransport> from_url(const std::string& base_url) {
        std::string rest = base_url.substr(5);
        bool echo = false;
        if (rest.rfind("echo", 0) == 0) {
            echo = true;
            rest = rest.size() > 4 && rest[4] == ':' ? rest.substr(5) : "";
        }
        std::uint64_t seed = 0;
        if (!rest.empty()) {
            try {
                seed = std::stoull(rest);
            } catch (const std::exception&) {
                throw ConfigError("bad mock url seed: " + base_url);
            }
        }
        return std::make_shared<MockTransport>(seed, echo);
    }

    std::string generate_text(const std::string& prompt, double temperature,
                              std::uint64_t sampling_seed, int sample_index,
                              int max_tokens) const {
        for (const auto& [key, value] : canned_) {
            if (prompt.find(key) != std::string::npos) return value;
        }
        if (echo_) return prompt;
        std::uint64_t h = mix64(seed_, fnv1a64(prompt));
        if (temperature > 0.0) {
            h = mix64(h, sampling_seed);
            h = mix64(h, static_cast<std::uint64_t>(sample_index) + 1);
        }
        Rng rng(h);
        const auto prompt_tokens = text::normalized_tokens(prompt);
        const auto& vocab = detail::mock_vocabulary();
        int n_words = 6 + static_cast<int>(rng.bounded(7));
        if (n_words > max_tokens) n_words = max_tokens;
        std::string out;
        for (int i = 0; i < n_words; ++i) {
            if (i) out.push_back(' ');
            if (!prompt_tokens.empty() && rng.bounded(2) == 0) {
                out += prompt_tokens[rng.bounded(prompt_tokens.size())];
            } else {
                out += vocab[rng.bounded(vocab.size())];
            }
        }
        return out;
    }

    // Token-hash bag projected onto kMockEmbeddingDim dimensions, then
    // L2-normalized. Texts without tokens map to a fixed basis vector.
    EmbeddingVector embed_text(const std::string& input) const {
        EmbeddingVector v;
        v.values.assign(kMockEmbeddingDim, 0.0);
        const auto tokens = text::normalized_tokens(input);
        if (tokens.empty()) {
            v.values[0] = 1.0;
            return v;
        }
        for (const auto& tok : tokens) {
            const std::uint64_t h = mix64(seed_, fnv1a64(tok));
            const std::size_t idx = static_cast<std::size_t>(h % kMockEmbeddingDim);
            const double sign = (h >> 6) & 1 ? 1.0 : -1.0;
            v.values[idx] += sign;
        }
        double n = v.norm();
        if (n == 0.0) {
            v.values.assign(kMockEmbeddingDim, 0.0);
            v.values[0] = 1.0;
            return v;
        }
        for (double& x : v.values) x /= n;
        return v;
    }

private:
    HttpResult complete_response(const ModelEndpoint& endpoint, const json& request) const {
        const std::string prompt = request.at("messages").at(0).at("content").get<std::string>();
        const double temperature = request.value("temperature", 0.0);
        const int n = request.value("n", 1);
        const int max_tokens = request.value("max_tokens", 512);
        std::uint64_t sampling_seed = mix64(fnv1a64(endpoint.model_name));
        if (request.contains("seed")) {
            sampling_seed = request.at("seed").get<std::uint64_t>();
        }
        json choices = json::array();
        for (int i = 0; i < n; ++i) {
            choices.push_back(
                {{"message",
                  {{"role", "assistant"},
                   {"content", generate_text(prompt, temperature, sampling_seed, i, max_tokens)}}}});
        }
        return {200, json{{"choices", choices}}.dump()};
    }

    HttpResult embed_response(const json& request) const {
        const std::string input = request.at("input").get<std::string>();
        const EmbeddingVector v = embed_text(input);
        return {200, json{{"data", json::array({{{"embedding", v.values}}})}}.dump()};
    }

    std::uint64_t seed_;
    bool echo_;
    std::vector<std::pair<std::string, std::string>> canned_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{500};
    double factor = 2.0;
    // Injectable so tests do not sleep for real.
    std::function<void(std::chrono::milliseconds)> sleep_fn;

    void wait(int attempt) const {
        auto delay = std::chrono::milliseconds(static_cast<long long>(
            static_cast<double>(base_delay.count()) * std::pow(factor, attempt)));
        if (sleep_fn) {
            sleep_fn(delay);
        } else {
            std::this_thread::sleep_for(delay);
        }
    }
};

namespace detail {

// Bounds outstanding requests per endpoint.
class Gate {
public:
    explicit Gate(int limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return in_use_ < limit_; });
        ++in_use_;
    }

    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            --in_use_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int in_use_ = 0;
    int limit_;
};

class GateLock {
public:
    explicit GateLock(Gate& gate) : gate_(gate) { gate_.acquire(); }
    ~GateLock() { gate_.release(); }
    GateLock(const GateLock&) = delete;
    GateLock& operator=(const GateLock&) = delete;

private:
    Gate& gate_;
};

}  // namespace detail

// Chat-completions-style client over an injectable transport. Shareable
// across threads; per-endpoint parallelism is capped at max_in_flight.
// Requests are idempotent reads, so retrying cannot duplicate side effects.
class Client {
public:
    explicit Client(std::shared_ptr<Transport> transport = nullptr, RetryPolicy retry = {})
        : override_transport_(std::move(transport)), retry_(retry) {}

    std::vector<std::string> complete(const ModelEndpoint& endpoint, const std::string& prompt,
                                      const GenerationParams& params) {
        if (endpoint.role == Role::embed) {
            throw ProviderError(ProviderErrorKind::precondition,
                                "complete() requires a generation endpoint");
        }
        params.validate();
        json request = {
            {"model", endpoint.model_name},
            {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens},
            {"n", params.n_samples},
        };
        if (!params.stop.empty()) request["stop"] = params.stop;
        if (params.seed) request["seed"] = *params.seed;

        const json response = roundtrip(endpoint, "/v1/chat/completions", request);
        std::vector<std::string> texts;
        try {
            for (const auto& choice : response.at("choices")) {
                texts.push_back(choice.at("message").at("content").get<std::string>());
            }
        } catch (const json::exception& e) {
            throw ProviderError(ProviderErrorKind::bad_response,
                                std::string("malformed completion response: ") + e.what());
        }
        if (texts.size() != static_cast<std::size_t>(params.n_samples)) {
            throw ProviderError(ProviderErrorKind::bad_response,
                                "expected " + std::to_string(params.n_samples) + " choices, got " +
                                    std::to_string(texts.size()));
        }
        return texts;
    }

    EmbeddingVector embed(const ModelEndpoint& endpoint, const std::string& input) {
        if (endpoint.role != Role::embed) {
            throw ProviderError(ProviderErrorKind::precondition,
                                "embed() requires an endpoint with role=embed");
        }
        if (input.empty()) {
            throw ProviderError(ProviderErrorKind::precondition, "embed() input is empty");
        }
        json request = {{"model", endpoint.model_name}, {"input", input}};
        const json response = roundtrip(endpoint, "/v1/embeddings", request);
        EmbeddingVector v;
        try {
            v.values = response.at("data").at(0).at("embedding").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw ProviderError(ProviderErrorKind::bad_response,
                                std::string("malformed embedding response: ") + e.what());
        }
        const double n = v.norm();
        if (v.values.empty() || n == 0.0 || !std::isfinite(n)) {
            throw ProviderError(ProviderErrorKind::bad_response, "embedding is empty or zero-norm");
        }
        for (double& x : v.values) x /= n;
        return v;
    }

private:
    json roundtrip(const ModelEndpoint& endpoint, const std::string& path, const json& request) {
        endpoint.validate();
        Transport& transport = transport_for(endpoint);
        detail::Gate& gate = gate_for(endpoint);
        // Invalid UTF-8 in prompts becomes U+FFFD on the wire instead of an
        // exception; model text is not trusted to be well-formed.
        const std::string body =
            request.dump(-1, ' ', false, json::error_handler_t::replace);

        for (int attempt = 0;; ++attempt) {
            HttpResult result;
            try {
                detail::GateLock lock(gate);
                result = transport.post(endpoint, path, body);
            } catch (const ProviderError& e) {
                if (!e.retryable() || attempt + 1 >= retry_.max_attempts) throw;
                retry_.wait(attempt);
                continue;
            }
            if (result.status == 429 || result.status >= 500) {
                const auto kind = result.status == 429 ? ProviderErrorKind::rate_limited
                                                       : ProviderErrorKind::transport;
                if (attempt + 1 >= retry_.max_attempts) {
                    throw ProviderError(kind, endpoint.base_url + path + " failed with status " +
                                                  std::to_string(result.status));
                }
                retry_.wait(attempt);
                continue;
            }
            if (result.status != 200) {
                throw ProviderError(ProviderErrorKind::bad_response,
                                    endpoint.base_url + path + " returned status " +
                                        std::to_string(result.status));
            }
            try {
                return json::parse(result.body);
            } catch (const json::exception& e) {
                throw ProviderError(ProviderErrorKind::bad_response,
                                    std::string("response is not JSON: ") + e.what());
            }
        }
    }

    Transport& transport_for(const ModelEndpoint& endpoint) {
        if (override_transport_) return *override_transport_;
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = transports_.find(endpoint.base_url);
        if (it == transports_.end()) {
            it = transports_.emplace(endpoint.base_url, make_transport(endpoint)).first;
        }
        return *it->second;
    }

    detail::Gate& gate_for(const ModelEndpoint& endpoint) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = gates_.find(endpoint.key());
        if (it == gates_.end()) {
            it = gates_.emplace(endpoint.key(), std::make_unique<detail::Gate>(endpoint.max_in_flight))
                     .first;
        }
        return *it->second;
    }

    static std::shared_ptr<Transport> make_transport(const ModelEndpoint& endpoint);

    std::shared_ptr<Transport> override_transport_;
    RetryPolicy retry_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Transport>> transports_;
    std::map<std::string, std::unique_ptr<detail::Gate>> gates_;
};

}  // namespace ptr::provider

// The HTTP transport lives in a separate header so that translation units
// which never talk to a real server do not pay for httplib.
#if !defined(PTR_NO_HTTP_TRANSPORT)
#include "ptr/http_transport.hpp"
#else
namespace ptr::provider {
inline std::shared_ptr<Transport> Client::make_transport(const ModelEndpoint& endpoint) {
    if (endpoint.is_mock()) return MockTransport::from_url(endpoint.base_url);
    throw ProviderError(ProviderErrorKind::precondition,
                        "HTTP transport disabled in this build: " + endpoint.base_url);
}
}  // namespace ptr::provider
#endif
