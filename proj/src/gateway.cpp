#include "mieval/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/io.hpp"

namespace mieval {

namespace fs = std::filesystem;

VerdictCache::VerdictCache(fs::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
}

std::string VerdictCache::key(std::string_view composed_hash, std::string_view prompt_hash, std::string_view model_id) {
    Sha256 h;
    h.update(composed_hash).update("\n").update(prompt_hash).update("\n").update(model_id);
    return h.hex_digest();
}

fs::path VerdictCache::entry_path(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

std::optional<Verdict> VerdictCache::get(const std::string& key) {
    {
        std::shared_lock lock(mutex_);
        if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    }
    if (dir_.empty()) return std::nullopt;
    const fs::path path = entry_path(key);
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    Verdict v;
    try {
        v = parse_verdict_record(json::parse(read_text_file(path)));
    } catch (const std::exception&) {
        return std::nullopt;  // unreadable entry: treat as a miss and overwrite later
    }
    std::unique_lock lock(mutex_);
    memory_.emplace(key, v);
    return v;
}

void VerdictCache::put(const std::string& key, const Verdict& verdict) {
    std::unique_lock lock(mutex_);
    memory_[key] = verdict;
    if (!dir_.empty()) write_file_atomic(entry_path(key), to_json(verdict).dump() + "\n");
}

std::size_t VerdictCache::size() const {
    std::shared_lock lock(mutex_);
    return memory_.size();
}

CostLedger& CostLedger::operator+=(const CostLedger& o) {
    queries += o.queries;
    provider_calls += o.provider_calls;
    cache_hits += o.cache_hits;
    attempts += o.attempts;
    failures += o.failures;
    total_cost += o.total_cost;
    if (unit_cost.nanos() == 0) unit_cost = o.unit_cost;
    return *this;
}

json to_json(const CostLedger& l) {
    return json{{"queries", l.queries},       {"provider_calls", l.provider_calls},
                {"cache_hits", l.cache_hits}, {"attempts", l.attempts},
                {"failures", l.failures},     {"unit_cost", l.unit_cost.dollars()},
                {"total_cost", l.total_cost.dollars()}};
}

std::vector<Verdict> BatchResult::answered() const {
    std::vector<Verdict> out;
    for (const auto& v : verdicts) {
        if (v) out.push_back(*v);
    }
    return out;
}

ImageBytesLoader png_directory_loader(fs::path dir) {
    return [dir = std::move(dir)](const EvalQuery& q) {
        const fs::path path = dir / (q.query_id + ".png");
        try {
            return read_binary_file(path);
        } catch (const ValidationError&) {
            throw ImageError("composed image missing for query '" + q.query_id + "': " + path.string());
        }
    };
}

// ---------------------------------------------------------------------------

Gateway::Gateway(Provider& provider, ProviderPolicy policy, Clock& clock, VerdictCache* cache)
    : provider_(provider),
      policy_(std::move(policy)),
      clock_(clock),
      cache_(cache),
      limiter_(policy_.requests_per_minute, clock) {
    policy_.validate();
}

Verdict Gateway::call_with_retries(const EvalQuery& query, const std::string& prompt_text,
                                   std::vector<std::uint8_t> image_png, CostLedger& ledger,
                                   std::vector<double>& times) {
    if (image_png.size() > policy_.max_payload_bytes) {
        throw ProviderError(ProviderErrorKind::payload_too_large,
                            "query '" + query.query_id + "': image of " + std::to_string(image_png.size()) +
                                " bytes exceeds the payload limit");
    }
    ProviderRequest request{&query, std::move(image_png), prompt_text};
    const int max_attempts = 1 + policy_.max_retries;
    for (int attempt = 1;; ++attempt) {
        if (attempt > 1) clock_.sleep_for(policy_.backoff.delay_ms(attempt - 1) / 1000.0);
        times.push_back(limiter_.acquire());
        ++ledger.attempts;
        ProviderResponse response;
        try {
            response = provider_.complete(request);
        } catch (const ProviderError& e) {
            if (!e.retryable()) throw;
            if (attempt >= max_attempts) {
                throw ProviderError(ProviderErrorKind::transport, "query '" + query.query_id + "': gave up after " +
                                                                      std::to_string(attempt) + " attempts: " + e.what());
            }
            continue;
        }
        Verdict v;
        v.query_id = query.query_id;
        v.answer = parse_verdict(response.text);
        v.raw_text = std::move(response.text);
        v.model_id = provider_.model_id();
        v.latency_ms = std::max(0.0, response.latency_ms);
        v.unit_cost = policy_.unit_cost;
        v.attempt = attempt;
        ++ledger.provider_calls;
        ledger.total_cost += policy_.unit_cost;
        return v;
    }
}

Verdict Gateway::evaluate_query(const EvalQuery& query, const PromptSpec& prompt, std::vector<std::uint8_t> image_png) {
    CostLedger ledger;
    std::vector<double> times;
    return call_with_retries(query, render_prompt(prompt), std::move(image_png), ledger, times);
}

BatchResult Gateway::run_batch(std::span<const EvalQuery> queries, const PromptSpec& prompt,
                               const ImageBytesLoader& load_image) {
    const std::string prompt_text = render_prompt(prompt);
    const std::string phash = sha256_hex(prompt_text);
    const std::string model = provider_.model_id();
    const bool send_image = load_image && provider_.reads_image();

    BatchResult result;
    result.verdicts.resize(queries.size());
    result.ledger.queries = queries.size();
    result.ledger.unit_cost = policy_.unit_cost;

    std::mutex merge_mutex;
    std::vector<std::pair<std::size_t, FailedQuery>> failures;
    std::exception_ptr fatal;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};

    auto worker = [&] {
        CostLedger local;
        std::vector<double> times;
        while (!stop.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= queries.size()) break;
            const EvalQuery& q = queries[i];
            std::string cache_key;
            if (cache_ != nullptr && q.composed_hash) {
                cache_key = VerdictCache::key(*q.composed_hash, phash, model);
                if (auto hit = cache_->get(cache_key)) {
                    hit->query_id = q.query_id;
                    result.verdicts[i] = std::move(*hit);
                    ++local.cache_hits;
                    continue;
                }
            }
            try {
                auto bytes = send_image ? load_image(q) : std::vector<std::uint8_t>{};
                Verdict v = call_with_retries(q, prompt_text, std::move(bytes), local, times);
                if (!cache_key.empty()) cache_->put(cache_key, v);
                result.verdicts[i] = std::move(v);
            } catch (const ProviderError& e) {
                std::lock_guard lock(merge_mutex);
                failures.emplace_back(i, FailedQuery{q.query_id, e.kind(), e.what()});
            } catch (...) {
                std::lock_guard lock(merge_mutex);
                if (!fatal) fatal = std::current_exception();
                stop = true;
            }
        }
        std::lock_guard lock(merge_mutex);
        result.ledger.provider_calls += local.provider_calls;
        result.ledger.cache_hits += local.cache_hits;
        result.ledger.attempts += local.attempts;
        result.ledger.total_cost += local.total_cost;
        result.call_times.insert(result.call_times.end(), times.begin(), times.end());
    };

    const auto n_workers =
        std::max<std::size_t>(1, std::min(static_cast<std::size_t>(policy_.max_parallel), queries.size()));
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (fatal) std::rethrow_exception(fatal);

    std::sort(failures.begin(), failures.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [_, f] : failures) result.failures.push_back(std::move(f));
    result.ledger.failures = result.failures.size();
    std::sort(result.call_times.begin(), result.call_times.end());
    return result;
}

Verdict evaluate_query(const EvalQuery& query, const PromptSpec& prompt, Provider& provider,
                       const ProviderPolicy& policy, std::vector<std::uint8_t> image_png) {
    SteadyClock clock;
    Gateway gw(provider, policy, clock);
    return gw.evaluate_query(query, prompt, std::move(image_png));
}

BatchResult run_batch(std::span<const EvalQuery> queries, const PromptSpec& prompt, Provider& provider,
                      const ProviderPolicy& policy, VerdictCache* cache, const ImageBytesLoader& load_image) {
    SteadyClock clock;
    Gateway gw(provider, policy, clock, cache);
    return gw.run_batch(queries, prompt, load_image);
}

}  // namespace mieval
