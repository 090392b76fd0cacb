#pragma once

// Query evaluation against a provider: retries, throttling, caching and cost
// accounting.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "mieval/clock.hpp"
#include "mieval/composer.hpp"
#include "mieval/prompts.hpp"
#include "mieval/provider.hpp"
#include "mieval/verdict.hpp"

namespace mieval {

/// Content-addressed verdict store: one JSON verdict per
/// (composed_hash, prompt hash, model_id) key. Reads run concurrently, writes
/// are serialized and atomic on disk. An empty directory keeps it in memory.
class VerdictCache {
public:
    explicit VerdictCache(std::filesystem::path dir = {});

    static std::string key(std::string_view composed_hash, std::string_view prompt_hash, std::string_view model_id);

    std::optional<Verdict> get(const std::string& key);
    void put(const std::string& key, const Verdict& verdict);
    std::size_t size() const;

private:
    std::filesystem::path entry_path(const std::string& key) const;

    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, Verdict> memory_;
};

struct CostLedger {
    std::size_t queries = 0;
    std::size_t provider_calls = 0;  // successful, billed calls
    std::size_t cache_hits = 0;
    std::size_t attempts = 0;        // every provider invocation, failed ones included
    std::size_t failures = 0;
    Money unit_cost;
    Money total_cost;                // unit_cost * provider_calls

    CostLedger& operator+=(const CostLedger& o);
};

json to_json(const CostLedger& l);

struct FailedQuery {
    std::string query_id;
    ProviderErrorKind kind;
    std::string message;
};

struct BatchResult {
    std::vector<std::optional<Verdict>> verdicts;  // aligned with the input queries
    std::vector<FailedQuery> failures;
    CostLedger ledger;
    std::vector<double> call_times;  // clock time of every provider invocation

    /// Successful verdicts in input order.
    std::vector<Verdict> answered() const;
};

/// Encoded bytes of a query's composed image.
using ImageBytesLoader = std::function<std::vector<std::uint8_t>(const EvalQuery&)>;

/// Reads <dir>/<query_id>.png.
ImageBytesLoader png_directory_loader(std::filesystem::path dir);

class Gateway {
public:
    Gateway(Provider& provider, ProviderPolicy policy, Clock& clock, VerdictCache* cache = nullptr);

    /// Retries transport failures up to max_retries with backoff; a parsed
    /// answer, refusals included, is never retried. Throws ProviderError when
    /// attempts are exhausted or the failure is not retryable.
    Verdict evaluate_query(const EvalQuery& query, const PromptSpec& prompt, std::vector<std::uint8_t> image_png);

    /// Bounded-parallel evaluation under a shared rate limiter. Cache hits skip
    /// the provider; failures are collected and the batch continues.
    BatchResult run_batch(std::span<const EvalQuery> queries, const PromptSpec& prompt,
                          const ImageBytesLoader& load_image = {});

private:
    Verdict call_with_retries(const EvalQuery& query, const std::string& prompt_text,
                              std::vector<std::uint8_t> image_png, CostLedger& ledger, std::vector<double>& times);

    Provider& provider_;
    ProviderPolicy policy_;
    Clock& clock_;
    VerdictCache* cache_;
    RateLimiter limiter_;
};

Verdict evaluate_query(const EvalQuery& query, const PromptSpec& prompt, Provider& provider,
                       const ProviderPolicy& policy, std::vector<std::uint8_t> image_png = {});

BatchResult run_batch(std::span<const EvalQuery> queries, const PromptSpec& prompt, Provider& provider,
                      const ProviderPolicy& policy, VerdictCache* cache = nullptr,
                      const ImageBytesLoader& load_image = {});

}  // namespace mieval
