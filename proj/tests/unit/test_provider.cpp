#include <atomic>
#include <chrono>
#include <thread>

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "ptr/provider.hpp"

using namespace ptr;
using namespace ptr::provider;
using testutil::mock_endpoint;

namespace {

GenerationParams sampled(double temperature, int n, std::uint64_t seed) {
    GenerationParams p;
    p.temperature = temperature;
    p.n_samples = n;
    p.seed = seed;
    return p;
}

// Transport that records call counts and concurrency high-water mark, and
// can fail the first k calls.
class ProbeTransport : public Transport {
public:
    explicit ProbeTransport(std::shared_ptr<Transport> inner, int failures_before_success = 0,
                            int fail_status = 0)
        : inner_(std::move(inner)),
          failures_left_(failures_before_success),
          fail_status_(fail_status) {}

    HttpResult post(const ModelEndpoint& endpoint, const std::string& path,
                    const std::string& body) override {
        const int now = ++concurrent_;
        int expected = high_water_.load();
        while (now > expected && !high_water_.compare_exchange_weak(expected, now)) {
        }
        ++calls_;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        HttpResult out;
        if (failures_left_-- > 0) {
            --concurrent_;
            if (fail_status_ > 0) return {fail_status_, "{}"};
            throw ProviderError(ProviderErrorKind::transport, "injected transport failure");
        }
        out = inner_->post(endpoint, path, body);
        --concurrent_;
        return out;
    }

    int calls() const { return calls_.load(); }
    int high_water() const { return high_water_.load(); }

private:
    std::shared_ptr<Transport> inner_;
    std::atomic<int> failures_left_;
    int fail_status_;
    std::atomic<int> calls_{0};
    std::atomic<int> concurrent_{0};
    std::atomic<int> high_water_{0};
};

RetryPolicy fast_retry() {
    RetryPolicy rp;
    rp.sleep_fn = [](std::chrono::milliseconds) {};
    return rp;
}

}  // namespace

TEST_CASE("mock completion is a pure function of seed, prompt and params") {
    Client client;
    auto endpoint = mock_endpoint(Role::weak, 7);
    auto a = client.complete(endpoint, "hello", sampled(0.8, 2, 3));
    auto b = client.complete(endpoint, "hello", sampled(0.8, 2, 3));
    REQUIRE(a.size() == 2);
    CHECK(a == b);
    // A different mock seed changes the output.
    Client other;
    auto c = other.complete(mock_endpoint(Role::weak, 8), "hello", sampled(0.8, 2, 3));
    CHECK(a != c);
}

TEST_CASE("complete returns exactly n_samples texts") {
    Client client;
    auto texts = client.complete(mock_endpoint(Role::weak, 1), "abc", sampled(0.5, 3, 1));
    CHECK(texts.size() == 3);
}

TEST_CASE("temperature zero is greedy: samples are identical and seed-independent") {
    Client client;
    auto endpoint = mock_endpoint(Role::strong, 4);
    auto a = client.complete(endpoint, "prompt", sampled(0.0, 2, 11));
    auto b = client.complete(endpoint, "prompt", sampled(0.0, 2, 999));
    CHECK(a[0] == a[1]);
    CHECK(a == b);
}

TEST_CASE("canned responses win by prompt substring") {
    auto mock = std::make_shared<MockTransport>(1);
    mock->add_canned("Q1", "A1");
    Client client(mock);
    auto texts = client.complete(mock_endpoint(Role::strong, 1), "please answer Q1 now",
                                 sampled(0.0, 1, 0));
    CHECK(texts[0] == "A1");
}

TEST_CASE("echo mock returns the prompt") {
    Client client;
    ModelEndpoint endpoint;
    endpoint.role = Role::strong;
    endpoint.base_url = "mock:echo";
    endpoint.model_name = "e";
    auto texts = client.complete(endpoint, "repeat me", sampled(0.0, 1, 0));
    CHECK(texts[0] == "repeat me");
}

TEST_CASE("mock embeddings are deterministic unit vectors") {
    Client client;
    auto endpoint = mock_endpoint(Role::embed, 5);
    Rng rng(31);
    for (int i = 0; i < 100; ++i) {
        const std::string text = testutil::random_token_string(rng, 10);
        auto v = client.embed(endpoint, text);
        CHECK(v.dim() == kMockEmbeddingDim);
        CHECK(std::abs(v.norm() - 1.0) <= 1e-6);
        auto w = client.embed(endpoint, text);
        CHECK(v.values == w.values);
        CHECK(std::abs(cosine(v, w) - 1.0) <= 1e-6);
    }
}

TEST_CASE("embed preconditions") {
    Client client;
    CHECK_THROWS_AS(client.embed(mock_endpoint(Role::weak, 1), "x"), ProviderError);
    CHECK_THROWS_AS(client.embed(mock_endpoint(Role::embed, 1), ""), ProviderError);
    CHECK_THROWS_AS(client.complete(mock_endpoint(Role::embed, 1), "x", {}), ProviderError);
}

TEST_CASE("transport errors are retried until success") {
    auto probe = std::make_shared<ProbeTransport>(std::make_shared<MockTransport>(3), 2);
    Client client(probe, fast_retry());
    auto texts = client.complete(mock_endpoint(Role::weak, 3), "x", sampled(0.0, 1, 0));
    CHECK(texts.size() == 1);
    CHECK(probe->calls() == 3);
}

TEST_CASE("rate limiting (429) is retried") {
    auto probe = std::make_shared<ProbeTransport>(std::make_shared<MockTransport>(3), 1, 429);
    Client client(probe, fast_retry());
    auto texts = client.complete(mock_endpoint(Role::weak, 3), "x", sampled(0.0, 1, 0));
    CHECK(texts.size() == 1);
    CHECK(probe->calls() == 2);
}

TEST_CASE("retries give up after max_attempts") {
    auto probe = std::make_shared<ProbeTransport>(std::make_shared<MockTransport>(3), 100);
    Client client(probe, fast_retry());
    CHECK_THROWS_AS(client.complete(mock_endpoint(Role::weak, 3), "x", sampled(0.0, 1, 0)),
                    ProviderError);
    CHECK(probe->calls() == 5);
}

TEST_CASE("bad responses are not retried") {
    auto probe = std::make_shared<ProbeTransport>(std::make_shared<MockTransport>(3), 1, 400);
    Client client(probe, fast_retry());
    try {
        client.complete(mock_endpoint(Role::weak, 3), "x", sampled(0.0, 1, 0));
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(e.kind() == ProviderErrorKind::bad_response);
    }
    CHECK(probe->calls() == 1);
}

TEST_CASE("at most max_in_flight requests are outstanding per endpoint") {
    auto probe = std::make_shared<ProbeTransport>(std::make_shared<MockTransport>(3));
    Client client(probe, fast_retry());
    auto endpoint = mock_endpoint(Role::weak, 3);
    endpoint.max_in_flight = 2;
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&client, endpoint] {
            client.complete(endpoint, "load", sampled(0.0, 1, 0));
        });
    }
    for (auto& t : threads) t.join();
    CHECK(probe->calls() == 8);
    CHECK(probe->high_water() <= 2);
}

TEST_CASE("mock url parsing") {
    CHECK(mock_endpoint(Role::weak, 12).is_mock());
    CHECK_THROWS_AS(MockTransport::from_url("mock:notanumber"), ConfigError);
    auto echo = MockTransport::from_url("mock:echo:9");
    CHECK(echo->generate_text("abc", 0.0, 0, 0, 64) == "abc");
}
