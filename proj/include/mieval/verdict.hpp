#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mieval/io.hpp"

namespace mieval {

enum class Answer { yes, no, refuse, unparseable };

std::string_view to_string(Answer a);
Answer parse_answer(std::string_view s);

/// Currency in integer nano-dollars so per-query costs sum exactly.
class Money {
public:
    constexpr Money() = default;
    static constexpr Money from_nanos(std::int64_t n) { return Money(n); }
    static Money from_dollars(double dollars);

    constexpr std::int64_t nanos() const { return nanos_; }
    double dollars() const { return static_cast<double>(nanos_) / 1e9; }

    constexpr Money operator+(Money o) const { return Money(nanos_ + o.nanos_); }
    constexpr Money& operator+=(Money o) {
        nanos_ += o.nanos_;
        return *this;
    }
    constexpr Money operator*(std::int64_t n) const { return Money(nanos_ * n); }
    constexpr auto operator<=>(const Money&) const = default;

private:
    constexpr explicit Money(std::int64_t n) : nanos_(n) {}
    std::int64_t nanos_ = 0;
};

struct Verdict {
    std::string query_id;
    Answer answer = Answer::unparseable;
    std::string raw_text;
    std::string model_id;
    double latency_ms = 0.0;
    Money unit_cost;
    int attempt = 1;

    bool operator==(const Verdict&) const = default;
};

json to_json(const Verdict& v);
Verdict parse_verdict_record(const json& j);
std::vector<Verdict> load_verdicts(const std::filesystem::path& path);
std::string verdicts_to_ndjson(const std::vector<Verdict>& verdicts);

/// Version tag of the refusal-pattern table.
std::string_view refusal_table_version();
const std::vector<std::string>& refusal_patterns();

/// Case-insensitive. A leading "yes"/"no" token (optionally wrapped in quotes,
/// asterisks or followed by punctuation) decides; otherwise a refusal-table
/// match gives refuse; everything else is unparseable.
Answer parse_verdict(std::string_view raw_text);

}  // namespace mieval
