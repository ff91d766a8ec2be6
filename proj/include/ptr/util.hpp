#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ptr {

// Error taxonomy shared across modules. The CLI maps these onto exit codes:
// ConfigError -> 2, ProviderError -> 3, everything else -> 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Malformed serialized input. Carries the 1-based line number and the field
// that failed, so callers can point at the offending row.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& field, const std::string& msg)
        : Error("line " + std::to_string(line) + ", field '" + field + "': " + msg),
          line_(line),
          field_(field) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

// FNV-1a 64-bit. Used everywhere a portable, platform-stable string hash is
// needed (std::hash is implementation-defined and would break byte-identical
// reproducibility across toolchains).
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// splitmix64 finalizer; good avalanche for combining seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

// Deterministic, platform-independent PRNG (splitmix64 stream).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Rejection-sampled to avoid modulo bias.
    std::uint64_t bounded(std::uint64_t n) {
        if (n < 2) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    double uniform01() {
        return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
    }

private:
    std::uint64_t state_;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// by index so the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (jobs <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ptr
