#include "mieval/provider.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/rng.hpp"

namespace mieval {

double BackoffSchedule::delay_ms(int retry) const {
    if (retry < 1) return 0.0;
    const double d = initial_ms * std::pow(multiplier, retry - 1);
    return std::min(d, max_ms);
}

void ProviderPolicy::validate() const {
    if (max_parallel < 1) throw ValidationError("policy: max_parallel must be >= 1");
    if (requests_per_minute < 1) throw ValidationError("policy: requests_per_minute must be >= 1");
    if (max_retries < 0) throw ValidationError("policy: max_retries must be >= 0");
    if (unit_cost.nanos() < 0) throw ValidationError("policy: unit_cost must be >= 0");
    if (backoff.initial_ms < 0 || backoff.multiplier < 1.0 || backoff.max_ms < 0) {
        throw ValidationError("policy: invalid backoff schedule");
    }
}

void ErrorModel::validate() const {
    for (double p : {flip_pos, flip_neg, refuse}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("error model rates must lie in [0,1]");
    }
}

TruthLookup truth_from_oracle(OracleTable oracle) {
    auto table = std::make_shared<const OracleTable>(std::move(oracle));
    return [table](const EvalQuery& q) -> std::optional<bool> {
        switch (q.pair_kind) {
            case PairKind::positive_control: return true;
            case PairKind::negative_control: return false;
            case PairKind::reconstruction: break;
        }
        if (const auto* label = table->resolve(q.probe.image_id, q.target)) return label->matches_target;
        return std::nullopt;
    };
}

Verdict mock_verdict(const EvalQuery& query, const TruthLookup& truth, const ErrorModel& error_model,
                     std::uint64_t seed, std::string_view model_id) {
    error_model.validate();
    const auto t = truth ? truth(query) : std::nullopt;
    if (!t) {
        throw ValidationError("mock oracle: missing truth for probe '" + query.probe.image_id + "' and target " +
                              to_string(query.target));
    }
    Rng rng(derive_seed(derive_seed(seed, query.seed), query.query_id));
    const double u_refuse = rng.uniform();
    const double u_flip = rng.uniform();

    Verdict v;
    v.query_id = query.query_id;
    v.model_id = std::string(model_id);
    if (u_refuse < error_model.refuse) {
        v.answer = Answer::refuse;
        v.raw_text = std::string(kMockRefusalText);
        return v;
    }
    bool says_yes = *t;
    if (*t && u_flip < error_model.flip_pos) says_yes = false;
    if (!*t && u_flip < error_model.flip_neg) says_yes = true;
    v.answer = says_yes ? Answer::yes : Answer::no;
    v.raw_text = says_yes ? "Yes" : "No";
    return v;
}

MockProvider::MockProvider(TruthLookup truth, ErrorModel error_model, std::uint64_t seed, std::string model_id,
                           double latency_ms)
    : truth_(std::move(truth)),
      error_model_(error_model),
      seed_(seed),
      model_id_(std::move(model_id)),
      latency_ms_(latency_ms) {
    error_model_.validate();
}

ProviderResponse MockProvider::complete(const ProviderRequest& request) {
    if (request.query == nullptr) throw ValidationError("mock oracle needs query metadata");
    const Verdict v = mock_verdict(*request.query, truth_, error_model_, seed_, model_id_);
    return {v.raw_text, latency_ms_};
}

// ---------------------------------------------------------------------------

HttpProvider::HttpProvider(ApiFormat format, std::string endpoint, std::string model_id, std::string api_key,
                           double timeout_s)
    : format_(format),
      endpoint_(std::move(endpoint)),
      model_id_(std::move(model_id)),
      api_key_(std::move(api_key)),
      timeout_s_(timeout_s) {
    if (api_key_.empty()) throw ConfigError(std::string(kApiKeyEnv) + " is not set");
    if (endpoint_.empty()) throw ConfigError("provider endpoint is empty");
}

json HttpProvider::build_request_body(ApiFormat format, const std::string& model_id, const std::string& prompt,
                                      const std::vector<std::uint8_t>& image_png) {
    const std::string b64 = base64_encode(image_png);
    if (format == ApiFormat::gemini) {
        return json{{"contents",
                     json::array({json{{"role", "user"},
                                       {"parts", json::array({json{{"text", prompt}},
                                                              json{{"inline_data",
                                                                    {{"mime_type", "image/png"}, {"data", b64}}}}})}}})},
                    {"generationConfig", {{"temperature", 0.0}}}};
    }
    return json{
        {"model", model_id},
        {"temperature", 0.0},
        {"messages",
         json::array({json{{"role", "user"},
                           {"content", json::array({json{{"type", "text"}, {"text", prompt}},
                                                    json{{"type", "image_url"},
                                                         {"image_url", {{"url", "data:image/png;base64," + b64}}}}})}}})}};
}

std::string HttpProvider::extract_text(ApiFormat format, const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        throw ProviderError(ProviderErrorKind::transport, "provider returned non-JSON body");
    }
    try {
        if (format == ApiFormat::gemini) {
            const auto& candidates = j.at("candidates");
            if (candidates.empty()) return {};  // blocked responses carry no candidate text
            std::string text;
            for (const auto& part : candidates.at(0).at("content").at("parts")) {
                if (part.contains("text")) text += part.at("text").get<std::string>();
            }
            return text;
        }
        const auto& content = j.at("choices").at(0).at("message").at("content");
        return content.is_null() ? std::string{} : content.get<std::string>();
    } catch (const json::exception&) {
        throw ProviderError(ProviderErrorKind::transport, "provider response lacks candidate text");
    }
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

ProviderResponse HttpProvider::complete(const ProviderRequest& request) {
    const SplitUrl url = split_url(endpoint_);
    std::string path = url.path;
    httplib::Headers headers;
    if (format_ == ApiFormat::gemini) {
        if (path.back() != '/') path += '/';
        path += "models/" + model_id_ + ":generateContent";
        headers.emplace("x-goog-api-key", api_key_);
    } else {
        headers.emplace("Authorization", "Bearer " + api_key_);
    }
    const std::string body = build_request_body(format_, model_id_, request.prompt, request.image_png).dump();

    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration<double>(timeout_s_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

    const auto t0 = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    const double latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    if (!res) {
        throw ProviderError(ProviderErrorKind::transport, "transport error: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        throw ProviderError(ProviderErrorKind::authentication, "authentication failed (HTTP " + std::to_string(status) + ")");
    }
    if (status == 413) throw ProviderError(ProviderErrorKind::payload_too_large, "payload too large (HTTP 413)");
    if (status < 200 || status >= 300) {
        throw ProviderError(ProviderErrorKind::transport, "HTTP " + std::to_string(status));
    }
    return {extract_text(format_, res->body), latency_ms};
}

// ---------------------------------------------------------------------------

ProviderConfig parse_provider_config(const json& j, const std::filesystem::path& base_dir) {
    ProviderConfig c;
    c.kind = j.value("kind", c.kind);
    if (c.kind != "mock" && c.kind != "gemini" && c.kind != "openai") {
        throw ConfigError("unknown provider kind '" + c.kind + "'");
    }
    c.model_id = j.value("model_id", c.kind == "mock" ? std::string("mock-oracle") : std::string{});
    if (c.model_id.empty()) throw ConfigError("provider config needs model_id");
    c.endpoint = j.value("endpoint", std::string{});
    if (c.kind != "mock" && c.endpoint.empty()) throw ConfigError("provider config needs endpoint");
    if (j.contains("api_key")) throw ConfigError("api keys must come from " + std::string(kApiKeyEnv) + ", not files");
    c.timeout_s = j.value("timeout_s", c.timeout_s);

    auto& p = c.policy;
    p.max_parallel = j.value("max_parallel", p.max_parallel);
    p.requests_per_minute = j.value("requests_per_minute", p.requests_per_minute);
    p.max_retries = j.value("max_retries", p.max_retries);
    p.unit_cost = Money::from_dollars(j.value("unit_cost", 0.0));
    p.max_payload_bytes = j.value("max_payload_bytes", p.max_payload_bytes);
    if (auto it = j.find("backoff"); it != j.end()) {
        p.backoff.initial_ms = it->value("initial_ms", p.backoff.initial_ms);
        p.backoff.multiplier = it->value("multiplier", p.backoff.multiplier);
        p.backoff.max_ms = it->value("max_ms", p.backoff.max_ms);
    }
    try {
        p.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }

    if (auto it = j.find("mock"); it != j.end()) {
        if (it->contains("truth")) {
            std::filesystem::path truth = it->at("truth").get<std::string>();
            c.truth_path = truth.is_relative() && !base_dir.empty() ? base_dir / truth : truth;
        }
        c.error_model.flip_pos = it->value("flip_pos", 0.0);
        c.error_model.flip_neg = it->value("flip_neg", 0.0);
        c.error_model.refuse = it->value("refuse", 0.0);
        c.mock_seed = it->value("seed", std::uint64_t{0});
        c.mock_latency_ms = it->value("latency_ms", 0.0);
        try {
            c.error_model.validate();
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
    }
    return c;
}

ProviderConfig load_provider_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("provider config " + path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    return parse_provider_config(j, path.parent_path());
}

json to_json(const ProviderConfig& c) {
    json j{{"kind", c.kind},
           {"model_id", c.model_id},
           {"endpoint", c.endpoint},
           {"timeout_s", c.timeout_s},
           {"max_parallel", c.policy.max_parallel},
           {"requests_per_minute", c.policy.requests_per_minute},
           {"max_retries", c.policy.max_retries},
           {"unit_cost", c.policy.unit_cost.dollars()},
           {"max_payload_bytes", c.policy.max_payload_bytes},
           {"backoff",
            {{"initial_ms", c.policy.backoff.initial_ms},
             {"multiplier", c.policy.backoff.multiplier},
             {"max_ms", c.policy.backoff.max_ms}}}};
    if (c.kind == "mock") {
        j["mock"] = {{"flip_pos", c.error_model.flip_pos},
                     {"flip_neg", c.error_model.flip_neg},
                     {"refuse", c.error_model.refuse},
                     {"seed", c.mock_seed},
                     {"latency_ms", c.mock_latency_ms}};
        if (c.truth_path) j["mock"]["truth"] = c.truth_path->string();
    }
    return j;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config, const OracleTable* oracle) {
    if (config.kind == "mock") {
        OracleTable truth;
        if (config.truth_path) {
            truth = load_oracle(*config.truth_path);
        } else if (oracle != nullptr) {
            truth = *oracle;
        }
        return std::make_unique<MockProvider>(truth_from_oracle(std::move(truth)), config.error_model,
                                              config.mock_seed, config.model_id, config.mock_latency_ms);
    }
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') throw ConfigError(std::string(kApiKeyEnv) + " is not set");
    const ApiFormat format = config.kind == "gemini" ? ApiFormat::gemini : ApiFormat::openai;
    return std::make_unique<HttpProvider>(format, config.endpoint, config.model_id, key, config.timeout_s);
}

}  // namespace mieval
