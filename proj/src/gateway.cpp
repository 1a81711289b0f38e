#include "apc/gateway.hpp"

#include "apc/errors.hpp"
#include "apc/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

using json = nlohmann::json;

namespace apc {

std::string purpose_name(Purpose p) {
    return p == Purpose::instruction_gen ? "instruction_gen" : "classification";
}

std::string backend_kind_name(BackendKind b) {
    switch (b) {
        case BackendKind::http: return "http";
        case BackendKind::replay: return "replay";
        case BackendKind::mock: return "mock";
    }
    return "unknown";
}

namespace {

Purpose purpose_from_name(const std::string& s) {
    if (s == "instruction_gen") return Purpose::instruction_gen;
    if (s == "classification") return Purpose::classification;
    throw ParseError("unknown purpose: " + s);
}

BackendKind backend_kind_from_name(const std::string& s) {
    if (s == "http") return BackendKind::http;
    if (s == "replay") return BackendKind::replay;
    if (s == "mock") return BackendKind::mock;
    throw ParseError("unknown backend kind: " + s);
}

void check_request(const LlmRequest& request) {
    if (request.prompt.empty()) throw ArgumentError("request prompt must be non-empty");
    if (request.temperature < 0.0 || request.temperature > 2.0)
        throw ArgumentError("temperature must be in [0, 2]");
    if (request.max_tokens <= 0) throw ArgumentError("max_tokens must be positive");
}

} // namespace

std::string cache_key(const LlmRequest& request) {
    char temp[32];
    std::snprintf(temp, sizeof(temp), "%.6f", request.temperature);
    std::string material = request.model_id;
    material += '\n';
    material += temp;
    material += '\n';
    material += std::to_string(request.max_tokens);
    material += '\n';
    material += request.prompt;
    return sha256_hex(material);
}

// MockBackend

MockBackend::MockBackend(std::vector<Rule> rules, std::string default_response)
    : rules_(std::move(rules)), default_response_(std::move(default_response)) {}

MockBackend MockBackend::from_script_file(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("mock script " + path.string() + ": " + e.what());
    }
    std::vector<Rule> rules;
    if (j.contains("rules")) {
        for (const auto& r : j["rules"]) {
            Rule rule;
            const auto& c = r.at("contains");
            if (c.is_string()) {
                rule.contains.push_back(c.get<std::string>());
            } else {
                for (const auto& s : c) rule.contains.push_back(s.get<std::string>());
            }
            rule.response = r.at("response").get<std::string>();
            rules.push_back(std::move(rule));
        }
    }
    std::string fallback = "reasoning: scripted default\nprediction: Correct";
    if (j.contains("default")) fallback = j["default"].get<std::string>();
    return MockBackend(std::move(rules), std::move(fallback));
}

LlmResponse MockBackend::complete(const LlmRequest& request) {
    check_request(request);
    calls_.fetch_add(1);
    {
        std::lock_guard<std::mutex> lock(mu_);
        recorded_.push_back(request);
    }
    const std::string* response = &default_response_;
    for (const auto& rule : rules_) {
        bool all = true;
        for (const auto& needle : rule.contains) {
            if (request.prompt.find(needle) == std::string::npos) {
                all = false;
                break;
            }
        }
        if (all) {
            response = &rule.response;
            break;
        }
    }
    LlmResponse out;
    out.text = *response;
    out.model_id = request.model_id;
    out.usage.input_tokens = estimate_tokens(request.prompt);
    out.usage.output_tokens = estimate_tokens(out.text);
    out.usage.estimated = true;
    out.backend = BackendKind::mock;
    out.latency_ms = 0;
    out.created_at = "1970-01-01T00:00:00Z"; // fixed so stores are reproducible
    return out;
}

std::vector<LlmRequest> MockBackend::recorded_requests() const {
    std::lock_guard<std::mutex> lock(mu_);
    return recorded_;
}

// HttpBackend

HttpBackend::HttpBackend(HttpOptions options) : options_(std::move(options)) {
    if (options_.base_url.empty()) throw ConfigError("http backend requires base_url");
    if (!options_.retry.sleeper) {
        options_.retry.sleeper = [](int ms) {
            std::this_thread::sleep_for(std::chrono::milliseconds(ms));
        };
    }
}

LlmResponse HttpBackend::complete(const LlmRequest& request) {
    check_request(request);

    json body{
        {"model", request.model_id},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
        {"messages",
         json::array({json{{"role", "system"},
                           {"content", "Follow the user's instructions and answer strictly in "
                                       "the requested output format."}},
                      json{{"role", "user"}, {"content", request.prompt}}})},
    };
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!options_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + options_.api_key);
    }

    int last_status = 0;
    std::string last_error;
    int delay_ms = options_.retry.base_delay_ms;
    for (int attempt = 0; attempt < std::max(options_.retry.attempts, 1); ++attempt) {
        if (attempt > 0) {
            options_.retry.sleeper(delay_ms);
            delay_ms *= 2;
        }
        const auto started = std::chrono::steady_clock::now();
        httplib::Client client(options_.base_url);
        client.set_connection_timeout(options_.timeout_sec);
        client.set_read_timeout(options_.timeout_sec);
        network_calls_.fetch_add(1);
        auto res = client.Post(options_.path, headers, payload, "application/json");
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();
        if (!res) {
            last_status = 0;
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        last_status = res->status;
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw BackendError("backend rejected request (status " +
                                   std::to_string(res->status) + ")",
                               res->status);
        }

        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::exception& e) {
            throw BackendError(std::string("unparseable backend response: ") + e.what(),
                               res->status);
        }
        LlmResponse out;
        out.model_id = request.model_id;
        out.backend = BackendKind::http;
        out.latency_ms = elapsed;
        out.created_at = iso_utc_now();
        try {
            out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw BackendError("backend response missing choices[0].message.content",
                               res->status);
        }
        if (reply.contains("usage")) {
            const auto& usage = reply["usage"];
            if (usage.contains("prompt_tokens")) {
                out.usage.input_tokens = usage["prompt_tokens"].get<std::int64_t>();
                out.usage.output_tokens = usage.value("completion_tokens", std::int64_t{0});
            } else if (usage.contains("input_tokens")) {
                out.usage.input_tokens = usage["input_tokens"].get<std::int64_t>();
                out.usage.output_tokens = usage.value("output_tokens", std::int64_t{0});
            } else {
                out.usage.input_tokens = estimate_tokens(request.prompt);
                out.usage.output_tokens = estimate_tokens(out.text);
                out.usage.estimated = true;
            }
        } else {
            out.usage.input_tokens = estimate_tokens(request.prompt);
            out.usage.output_tokens = estimate_tokens(out.text);
            out.usage.estimated = true;
        }
        return out;
    }
    throw BackendError("backend unreachable after " + std::to_string(options_.retry.attempts) +
                           " attempts (" + last_error + ")",
                       last_status);
}

// ReplayBackend

ReplayBackend::ReplayBackend(std::filesystem::path cache_dir, std::unique_ptr<LlmBackend> inner)
    : cache_dir_(std::move(cache_dir)), inner_(std::move(inner)) {
    std::filesystem::create_directories(cache_dir_);
}

LlmResponse ReplayBackend::complete(const LlmRequest& request) {
    check_request(request);
    const std::string key = cache_key(request);
    const std::filesystem::path file = cache_dir_ / (key + ".json");

    if (std::filesystem::exists(file)) {
        json j;
        try {
            j = json::parse(read_file(file));
        } catch (const json::exception& e) {
            throw ParseError("corrupt replay cache entry " + file.string() + ": " + e.what());
        }
        const auto& r = j.at("response");
        LlmResponse out;
        out.text = r.at("text").get<std::string>();
        out.model_id = request.model_id;
        out.usage.input_tokens = r.at("input_tokens").get<std::int64_t>();
        out.usage.output_tokens = r.at("output_tokens").get<std::int64_t>();
        out.usage.estimated = r.value("estimated", false);
        out.backend = BackendKind::replay;
        out.latency_ms = r.value("latency_ms", std::int64_t{0});
        out.created_at = r.value("created_at", "");
        hits_.fetch_add(1);
        return out;
    }

    misses_.fetch_add(1);
    if (!inner_) {
        throw BackendError("replay cache miss for " + key + " and no inner backend configured");
    }
    LlmResponse out = inner_->complete(request);

    json j{
        {"request",
         {{"model_id", request.model_id},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens},
          {"purpose", purpose_name(request.purpose)},
          {"prompt", request.prompt}}},
        {"response",
         {{"text", out.text},
          {"input_tokens", out.usage.input_tokens},
          {"output_tokens", out.usage.output_tokens},
          {"estimated", out.usage.estimated},
          {"latency_ms", out.latency_ms},
          {"created_at", out.created_at}}},
    };
    atomic_write_file(file, j.dump(2) + "\n");
    return out;
}

// Gateway

Gateway::Gateway(std::unique_ptr<LlmBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(options) {
    if (!backend_) throw ConfigError("gateway requires a backend");
    if (options_.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
}

LlmResponse Gateway::complete(const LlmRequest& request) {
    {
        std::unique_lock<std::mutex> lock(mu_);
        slot_available_.wait(lock, [this] { return in_flight_ < options_.max_in_flight; });
        ++in_flight_;
    }

    LlmResponse response;
    try {
        response = backend_->complete(request);
    } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        --in_flight_;
        slot_available_.notify_one();
        throw;
    }

    {
        std::lock_guard<std::mutex> lock(mu_);
        --in_flight_;
        ledger_.push_back({request.model_id, request.purpose, response.usage.input_tokens,
                           response.usage.output_tokens, response.usage.estimated,
                           response.backend, response.latency_ms});
    }
    slot_available_.notify_one();
    return response;
}

std::vector<LedgerEntry> Gateway::ledger() const {
    std::lock_guard<std::mutex> lock(mu_);
    return ledger_;
}

LedgerSummary Gateway::summary() const {
    std::lock_guard<std::mutex> lock(mu_);
    LedgerSummary s;
    s.calls = ledger_.size();
    for (const auto& e : ledger_) {
        s.input_tokens += e.input_tokens;
        s.output_tokens += e.output_tokens;
        switch (e.backend) {
            case BackendKind::http: ++s.http_calls; break;
            case BackendKind::mock: ++s.mock_calls; break;
            case BackendKind::replay: ++s.replay_calls; break;
        }
    }
    return s;
}

// Pricing

PriceTable PriceTable::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("price table " + path.string() + ": " + e.what());
    }
    PriceTable table;
    for (auto it = j.begin(); it != j.end(); ++it) {
        Price p;
        p.input_per_million = it.value().at("input_per_million").get<double>();
        p.output_per_million = it.value().at("output_per_million").get<double>();
        if (p.input_per_million < 0 || p.output_per_million < 0)
            throw ConfigError("negative price for model " + it.key());
        table.prices[it.key()] = p;
    }
    return table;
}

CostReport estimate_cost(const std::vector<LedgerEntry>& ledger, const PriceTable& prices) {
    CostReport report;
    report.calls = ledger.size();
    if (ledger.empty()) {
        report.zero_calls = true;
        return report;
    }
    for (const auto& e : ledger) {
        auto it = prices.prices.find(e.model_id);
        if (it == prices.prices.end()) {
            throw ConfigError("no price for model '" + e.model_id + "'");
        }
        report.total += (static_cast<double>(e.input_tokens) * it->second.input_per_million +
                         static_cast<double>(e.output_tokens) * it->second.output_per_million) /
                        1e6;
    }
    report.per_call = report.total / static_cast<double>(report.calls);
    return report;
}

void append_ledger_file(const std::filesystem::path& path, const std::vector<LedgerEntry>& entries) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::string out;
    for (const auto& e : entries) {
        json j{{"model_id", e.model_id},
               {"purpose", purpose_name(e.purpose)},
               {"input_tokens", e.input_tokens},
               {"output_tokens", e.output_tokens},
               {"estimated", e.estimated},
               {"backend", backend_kind_name(e.backend)},
               {"latency_ms", e.latency_ms}};
        out += j.dump() + "\n";
    }
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f) throw ConfigError("cannot append ledger file: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<LedgerEntry> load_ledger_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read ledger file: " + path.string());
    std::vector<LedgerEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("ledger line " + std::to_string(line_no) + ": " + e.what());
        }
        LedgerEntry entry;
        entry.model_id = j.at("model_id").get<std::string>();
        entry.purpose = purpose_from_name(j.at("purpose").get<std::string>());
        entry.input_tokens = j.at("input_tokens").get<std::int64_t>();
        entry.output_tokens = j.at("output_tokens").get<std::int64_t>();
        entry.estimated = j.value("estimated", false);
        entry.backend = backend_kind_from_name(j.value("backend", "mock"));
        entry.latency_ms = j.value("latency_ms", std::int64_t{0});
        entries.push_back(std::move(entry));
    }
    return entries;
}

} // namespace apc
