#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

#include "ptr/provider.hpp"

namespace ptr::provider {

// Plain-HTTP chat-completions transport. Credentials come from the
// environment variable named by the endpoint (never from config files).
class HttpTransport : public Transport {
public:
    HttpResult post(const ModelEndpoint& endpoint, const std::string& path,
                    const std::string& json_body) override {
        httplib::Client client(endpoint.base_url);
        client.set_connection_timeout(30);
        client.set_read_timeout(120);
        httplib::Headers headers;
        if (!endpoint.api_key_env.empty()) {
            if (const char* key = std::getenv(endpoint.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }
        auto result = client.Post(path, headers, json_body, "application/json");
        if (!result) {
            throw ProviderError(ProviderErrorKind::transport,
                                endpoint.base_url + path + ": " + httplib::to_string(result.error()));
        }
        return {result->status, result->body};
    }
};

inline std::shared_ptr<Transport> Client::make_transport(const ModelEndpoint& endpoint) {
    if (endpoint.is_mock()) return MockTransport::from_url(endpoint.base_url);
    return std::make_shared<HttpTransport>();
}

}  // namespace ptr::provider
