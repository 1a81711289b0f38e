#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace apc {

enum class Purpose { instruction_gen, classification };
enum class BackendKind { http, replay, mock };

std::string purpose_name(Purpose p);
std::string backend_kind_name(BackendKind b);

struct LlmRequest {
    std::string prompt;
    std::string model_id;
    double temperature = 0.0; // [0, 2]
    int max_tokens = 1024;
    Purpose purpose = Purpose::classification;
};

struct TokenUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    bool estimated = false; // backend omitted usage; whitespace*1.3 heuristic
};

struct LlmResponse {
    std::string text;
    std::string model_id;
    TokenUsage usage;
    BackendKind backend = BackendKind::mock;
    std::int64_t latency_ms = 0;
    std::string created_at; // stamped by the serving backend; replay preserves it
};

// 64-hex SHA-256 over (model_id, temperature, max_tokens, prompt bytes).
// Stable across processes; purpose is deliberately excluded.
std::string cache_key(const LlmRequest& request);

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual LlmResponse complete(const LlmRequest& request) = 0;
    virtual BackendKind kind() const = 0;
};

// Scripted backend: ordered substring rules, first match wins. A rule with
// several substrings requires all of them. Usage is estimated; timestamps
// are fixed so runs are reproducible.
class MockBackend : public LlmBackend {
public:
    struct Rule {
        std::vector<std::string> contains;
        std::string response;
    };

    MockBackend() = default;
    MockBackend(std::vector<Rule> rules, std::string default_response);

    static MockBackend from_script_file(const std::filesystem::path& path);

    LlmResponse complete(const LlmRequest& request) override;
    BackendKind kind() const override { return BackendKind::mock; }

    std::size_t call_count() const { return calls_.load(); }
    std::vector<LlmRequest> recorded_requests() const;

private:
    std::vector<Rule> rules_;
    std::string default_response_ = "reasoning: scripted default\nprediction: Correct";
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mu_;
    std::vector<LlmRequest> recorded_;
};

struct RetryPolicy {
    int attempts = 3;
    int base_delay_ms = 1000; // doubled per retry
    std::function<void(int)> sleeper; // injectable for tests; default sleeps
};

struct HttpOptions {
    std::string base_url;                       // scheme://host[:port]
    std::string path = "/v1/chat/completions";  // chat-completion endpoint
    std::string api_key;                        // bearer token; may be empty
    RetryPolicy retry;
    int timeout_sec = 120;
};

// JSON-over-HTTP chat completion: one fixed system message plus the rendered
// prompt as the user message. 429 and 5xx are retried with exponential
// backoff; other failures raise BackendError with the status code.
class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(HttpOptions options);

    LlmResponse complete(const LlmRequest& request) override;
    BackendKind kind() const override { return BackendKind::http; }

    std::size_t network_calls() const { return network_calls_.load(); }

private:
    HttpOptions options_;
    std::atomic<std::size_t> network_calls_{0};
};

// Content-addressed record/replay cache: one JSON file per digest under
// cache_dir. Hits are served without touching the inner backend; misses go
// to the inner backend (if any) and are persisted.
class ReplayBackend : public LlmBackend {
public:
    ReplayBackend(std::filesystem::path cache_dir, std::unique_ptr<LlmBackend> inner);

    LlmResponse complete(const LlmRequest& request) override;
    BackendKind kind() const override { return BackendKind::replay; }

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }
    LlmBackend* inner() { return inner_.get(); }

private:
    std::filesystem::path cache_dir_;
    std::unique_ptr<LlmBackend> inner_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

struct LedgerEntry {
    std::string model_id;
    Purpose purpose = Purpose::classification;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    bool estimated = false;
    BackendKind backend = BackendKind::mock;
    std::int64_t latency_ms = 0;
};

struct LedgerSummary {
    std::size_t calls = 0;
    std::size_t http_calls = 0;
    std::size_t mock_calls = 0;
    std::size_t replay_calls = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct GatewayOptions {
    int max_in_flight = 8;
};

// Single entry point for model calls: bounds in-flight concurrency and
// records every successful call exactly once. Callers need no locking.
class Gateway {
public:
    explicit Gateway(std::unique_ptr<LlmBackend> backend, GatewayOptions options = {});

    LlmResponse complete(const LlmRequest& request);

    std::vector<LedgerEntry> ledger() const;
    LedgerSummary summary() const;
    LlmBackend* backend() { return backend_.get(); }

private:
    std::unique_ptr<LlmBackend> backend_;
    GatewayOptions options_;
    mutable std::mutex mu_;
    std::condition_variable slot_available_;
    int in_flight_ = 0;
    std::vector<LedgerEntry> ledger_;
};

struct Price {
    double input_per_million = 0.0;
    double output_per_million = 0.0;
};

struct PriceTable {
    std::map<std::string, Price> prices; // model_id -> price
    static PriceTable load(const std::filesystem::path& path);
};

struct CostReport {
    double total = 0.0;
    double per_call = 0.0;
    std::size_t calls = 0;
    bool zero_calls = false;
};

// total = sum (in*in_price + out*out_price)/1e6; unknown model -> ConfigError.
CostReport estimate_cost(const std::vector<LedgerEntry>& ledger, const PriceTable& prices);

void append_ledger_file(const std::filesystem::path& path, const std::vector<LedgerEntry>& entries);
std::vector<LedgerEntry> load_ledger_file(const std::filesystem::path& path);

} // namespace apc
