#include "mieval/verdict.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "mieval/error.hpp"

namespace mieval::fixtures {
extern const std::string_view refusal_patterns_v1;
}

namespace mieval {

std::string_view to_string(Answer a) {
    switch (a) {
        case Answer::yes: return "yes";
        case Answer::no: return "no";
        case Answer::refuse: return "refuse";
        case Answer::unparseable: return "unparseable";
    }
    return "?";
}

Answer parse_answer(std::string_view s) {
    if (s == "yes") return Answer::yes;
    if (s == "no") return Answer::no;
    if (s == "refuse") return Answer::refuse;
    if (s == "unparseable") return Answer::unparseable;
    throw ValidationError("unknown answer '" + std::string(s) + "'");
}

Money Money::from_dollars(double dollars) {
    if (!(dollars >= 0.0) || !std::isfinite(dollars)) throw ValidationError("cost must be a non-negative amount");
    return Money(static_cast<std::int64_t>(std::llround(dollars * 1e9)));
}

json to_json(const Verdict& v) {
    return json{{"query_id", v.query_id},     {"answer", std::string(to_string(v.answer))},
                {"raw_text", v.raw_text},     {"model_id", v.model_id},
                {"latency_ms", v.latency_ms}, {"unit_cost", v.unit_cost.dollars()},
                {"attempt", v.attempt}};
}

Verdict parse_verdict_record(const json& j) {
    Verdict v;
    v.query_id = j.at("query_id").get<std::string>();
    v.answer = parse_answer(j.at("answer").get<std::string>());
    v.raw_text = j.at("raw_text").get<std::string>();
    v.model_id = j.at("model_id").get<std::string>();
    v.latency_ms = j.at("latency_ms").get<double>();
    v.unit_cost = Money::from_dollars(j.at("unit_cost").get<double>());
    v.attempt = j.at("attempt").get<int>();
    if (v.latency_ms < 0) throw ValidationError("verdict '" + v.query_id + "': negative latency");
    if (v.attempt < 1) throw ValidationError("verdict '" + v.query_id + "': attempt must be >= 1");
    return v;
}

std::vector<Verdict> load_verdicts(const std::filesystem::path& path) {
    std::vector<Verdict> out;
    std::set<std::string> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto v = parse_verdict_record(row);
        if (!seen.insert(v.query_id).second) throw ValidationError("duplicate verdict for '" + v.query_id + "'");
        out.push_back(std::move(v));
    });
    return out;
}

std::string verdicts_to_ndjson(const std::vector<Verdict>& verdicts) {
    std::string out;
    for (const auto& v : verdicts) {
        out += to_json(v).dump();
        out += '\n';
    }
    return out;
}

std::string_view refusal_table_version() { return "refusal_patterns/v1"; }

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Curly apostrophes are folded so "I’m sorry" matches "i'm sorry".
std::string normalize(std::string_view s) {
    std::string out = lower(s);
    const std::string curly = "\xE2\x80\x99";
    std::size_t pos = 0;
    while ((pos = out.find(curly, pos)) != std::string::npos) out.replace(pos, curly.size(), "'");
    return out;
}

bool leading_token(std::string_view text, std::string_view token) {
    if (text.substr(0, token.size()) != token) return false;
    if (text.size() == token.size()) return true;
    return !std::isalnum(static_cast<unsigned char>(text[token.size()]));
}

}  // namespace

const std::vector<std::string>& refusal_patterns() {
    static const std::vector<std::string> patterns = [] {
        std::vector<std::string> out;
        std::istringstream in{std::string(fixtures::refusal_patterns_v1)};
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line.front() == '#') continue;
            out.push_back(normalize(line));
        }
        return out;
    }();
    return patterns;
}

Answer parse_verdict(std::string_view raw_text) {
    const std::string text = normalize(raw_text);
    std::size_t start = 0;
    while (start < text.size()) {
        const char c = text[start];
        if (std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '*' || c == '`' ||
            c == '(' || c == '[') {
            ++start;
        } else {
            break;
        }
    }
    const std::string_view body = std::string_view(text).substr(start);
    if (leading_token(body, "yes")) return Answer::yes;
    if (leading_token(body, "no")) return Answer::no;
    for (const auto& pattern : refusal_patterns()) {
        if (text.find(pattern) != std::string::npos) return Answer::refuse;
    }
    return Answer::unparseable;
}

}  // namespace mieval
