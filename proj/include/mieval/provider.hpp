#pragma once

// MLLM providers: one image attachment plus one text prompt in, one text
// response out. The mock provider replays oracle truth through a seeded error
// model; the HTTP provider talks to a Gemini- or OpenAI-style endpoint.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mieval/composer.hpp"
#include "mieval/corpus.hpp"
#include "mieval/error.hpp"
#include "mieval/verdict.hpp"

namespace mieval {

enum class ProviderErrorKind { transport, authentication, payload_too_large };

class ProviderError : public Error {
public:
    ProviderError(ProviderErrorKind kind, std::string what) : Error(std::move(what)), kind_(kind) {}
    ProviderErrorKind kind() const { return kind_; }
    bool retryable() const { return kind_ == ProviderErrorKind::transport; }

private:
    ProviderErrorKind kind_;
};

struct ProviderRequest {
    const EvalQuery* query = nullptr;  // metadata only; real providers ignore it
    std::vector<std::uint8_t> image_png;
    std::string prompt;
};

struct ProviderResponse {
    std::string text;
    double latency_ms = 0.0;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string model_id() const = 0;
    /// Throws ProviderError on failure.
    virtual ProviderResponse complete(const ProviderRequest& request) = 0;
    /// False when answers never depend on the pixels; the gateway then skips
    /// encoding request images.
    virtual bool reads_image() const { return true; }
};

struct BackoffSchedule {
    double initial_ms = 500.0;
    double multiplier = 2.0;
    double max_ms = 30000.0;

    /// Delay before retry number `retry` (1-based).
    double delay_ms(int retry) const;
};

struct ProviderPolicy {
    int max_parallel = 4;
    int requests_per_minute = 60;
    int max_retries = 3;
    BackoffSchedule backoff;
    Money unit_cost;
    std::size_t max_payload_bytes = 20u * 1024u * 1024u;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Mock oracle

struct ErrorModel {
    double flip_pos = 0.0;  // P(answer "no" | true match)
    double flip_neg = 0.0;  // P(answer "yes" | true non-match)
    double refuse = 0.0;

    void validate() const;
};

/// Ground truth for a query: does the probe match the target identity?
using TruthLookup = std::function<std::optional<bool>(const EvalQuery&)>;

/// Controls answer from their pair kind; reconstructions from `oracle`
/// (human_majority preferred).
TruthLookup truth_from_oracle(OracleTable oracle);

inline constexpr std::string_view kMockRefusalText =
    "I'm sorry, I can't help with identifying people in images.";

/// Deterministic in (seed, query.seed, query.query_id). Throws ValidationError
/// when truth is missing.
Verdict mock_verdict(const EvalQuery& query, const TruthLookup& truth, const ErrorModel& error_model,
                     std::uint64_t seed, std::string_view model_id = "mock-oracle");

class MockProvider final : public Provider {
public:
    MockProvider(TruthLookup truth, ErrorModel error_model, std::uint64_t seed, std::string model_id = "mock-oracle",
                 double latency_ms = 0.0);

    std::string model_id() const override { return model_id_; }
    ProviderResponse complete(const ProviderRequest& request) override;
    bool reads_image() const override { return false; }

private:
    TruthLookup truth_;
    ErrorModel error_model_;
    std::uint64_t seed_;
    std::string model_id_;
    double latency_ms_;
};

// ---------------------------------------------------------------------------
// HTTP provider

enum class ApiFormat { gemini, openai };

class HttpProvider final : public Provider {
public:
    /// Throws ConfigError when api_key is empty; no network traffic happens here.
    HttpProvider(ApiFormat format, std::string endpoint, std::string model_id, std::string api_key,
                 double timeout_s = 60.0);

    std::string model_id() const override { return model_id_; }
    ProviderResponse complete(const ProviderRequest& request) override;

    static json build_request_body(ApiFormat format, const std::string& model_id, const std::string& prompt,
                                   const std::vector<std::uint8_t>& image_png);
    /// Extracts the response text; throws ProviderError(transport) when the
    /// body has no candidate text.
    static std::string extract_text(ApiFormat format, const std::string& body);

private:
    ApiFormat format_;
    std::string endpoint_;
    std::string model_id_;
    std::string api_key_;
    double timeout_s_;
};

// ---------------------------------------------------------------------------
// Configuration file

struct ProviderConfig {
    std::string kind = "mock";  // mock | gemini | openai
    std::string model_id = "mock-oracle";
    std::string endpoint;
    ProviderPolicy policy;
    double timeout_s = 60.0;
    // mock only
    std::optional<std::filesystem::path> truth_path;
    ErrorModel error_model;
    std::uint64_t mock_seed = 0;
    double mock_latency_ms = 0.0;
};

inline constexpr const char* kApiKeyEnv = "MLLM_API_KEY";

/// Relative paths inside the file resolve against the file's directory.
ProviderConfig load_provider_config(const std::filesystem::path& path);
ProviderConfig parse_provider_config(const json& j, const std::filesystem::path& base_dir = {});
json to_json(const ProviderConfig& c);

/// Real providers read MLLM_API_KEY and throw ConfigError before any network
/// call when it is unset. `oracle` supplies truth for the mock when the config
/// names no truth file.
std::unique_ptr<Provider> make_provider(const ProviderConfig& config, const OracleTable* oracle = nullptr);

}  // namespace mieval
