#include "mieval/metrics.hpp"

#include <cmath>

#include "mieval/error.hpp"

namespace mieval {

RateReport rates_from_counts(const ConfusionCounts& c) {
    RateReport r;
    r.attacc_curr = {c.tp + c.fp, c.total()};
    r.tpr = {c.tp, c.tp + c.fn};
    r.fnr = {c.fn, c.tp + c.fn};
    r.fpr = {c.fp, c.fp + c.tn};
    r.tnr = {c.tn, c.fp + c.tn};
    return r;
}

double mixture_attacc(double p_oracle_pos, double tpr, double fpr) {
    for (double x : {p_oracle_pos, tpr, fpr}) {
        if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("mixture_attacc: inputs must lie in [0,1]");
    }
    return p_oracle_pos * tpr + (1.0 - p_oracle_pos) * fpr;
}

MllmReport mllm_report(std::span<const Verdict> verdicts) {
    if (verdicts.empty()) throw ValidationError("mllm_report: empty verdict list");
    MllmReport r;
    for (const auto& v : verdicts) {
        switch (v.answer) {
            case Answer::yes: ++r.yes; break;
            case Answer::no: ++r.no; break;
            case Answer::refuse: ++r.refuse; break;
            case Answer::unparseable: ++r.unparseable; break;
        }
    }
    r.total = verdicts.size();
    const auto n = static_cast<double>(r.total);
    r.yes_rate = static_cast<double>(r.yes) / n;
    r.no_rate = static_cast<double>(r.no) / n;
    r.refuse_rate = static_cast<double>(r.refuse) / n;
    r.unparseable_rate = static_cast<double>(r.unparseable) / n;
    r.attacc_mllm = r.yes_rate;
    return r;
}

NumericReport to_numeric(const RateReport& r) {
    NumericReport out;
    auto put = [&](const char* name, const Rate& rate) {
        if (auto v = rate.value()) out[name] = *v;
    };
    put("attacc_curr", r.attacc_curr);
    put("tpr", r.tpr);
    put("fnr", r.fnr);
    put("fpr", r.fpr);
    put("tnr", r.tnr);
    return out;
}

NumericReport to_numeric(const MllmReport& r) {
    return {{"attacc_mllm", r.attacc_mllm},
            {"yes_rate", r.yes_rate},
            {"no_rate", r.no_rate},
            {"refuse_rate", r.refuse_rate},
            {"unparseable_rate", r.unparseable_rate}};
}

std::map<std::string, FieldStats> aggregate_runs(std::span<const NumericReport> reports) {
    if (reports.size() < 2) throw ValidationError("aggregate_runs: need at least 2 reports");
    for (const auto& r : reports) {
        if (r.size() != reports.front().size()) throw ValidationError("aggregate_runs: heterogeneous fields");
        for (const auto& [name, _] : reports.front()) {
            if (!r.contains(name)) throw ValidationError("aggregate_runs: field '" + name + "' missing in a report");
        }
    }
    std::map<std::string, FieldStats> out;
    for (const auto& [name, _] : reports.front()) {
        // Welford's update.
        double mean = 0.0;
        double m2 = 0.0;
        std::size_t n = 0;
        for (const auto& r : reports) {
            const double x = r.at(name);
            ++n;
            const double delta = x - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (x - mean);
        }
        out[name] = FieldStats{mean, std::sqrt(std::max(0.0, m2) / static_cast<double>(n - 1)), n};
    }
    return out;
}

RowCheck check_table_row(const TableRow& row, double tolerance_pp) {
    if (!(tolerance_pp > 0)) throw ValidationError("check_table_row: tolerance must be positive");
    RowCheck c;
    c.tpr_fnr_residual = row.tpr + row.fnr - 100.0;
    c.fpr_tnr_residual = row.fpr + row.tnr - 100.0;
    const double p = row.attacc_mllm / 100.0;
    c.mixture_residual = 100.0 * (p * row.tpr / 100.0 + (1.0 - p) * row.fpr / 100.0) - row.attacc_curr;
    // Tiny slack so residuals that equal the tolerance in decimal still pass.
    const double limit = tolerance_pp + 1e-9;
    c.pass = std::abs(c.tpr_fnr_residual) <= limit && std::abs(c.fpr_tnr_residual) <= limit &&
             std::abs(c.mixture_residual) <= limit;
    return c;
}

TableRow table_row_from(const MllmReport& mllm, const RateReport& rates) {
    auto pct = [](const Rate& r) { return r.value() ? 100.0 * *r.value() : std::nan(""); };
    return TableRow{100.0 * mllm.attacc_mllm, pct(rates.attacc_curr), pct(rates.tpr),
                    pct(rates.fnr),           pct(rates.fpr),         pct(rates.tnr)};
}

json to_json(const ConfusionCounts& c) { return json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

json to_json(const RateReport& r) {
    json j;
    auto put = [&](const char* name, const Rate& rate) {
        auto v = rate.value();
        j[name] = v ? json(*v) : json(nullptr);
        j["denominators"][name] = rate.denominator;
    };
    put("attacc_curr", r.attacc_curr);
    put("tpr", r.tpr);
    put("fnr", r.fnr);
    put("fpr", r.fpr);
    put("tnr", r.tnr);
    return j;
}

json to_json(const MllmReport& r) {
    return json{{"total", r.total},
                {"yes", r.yes},
                {"no", r.no},
                {"refuse", r.refuse},
                {"unparseable", r.unparseable},
                {"yes_rate", r.yes_rate},
                {"no_rate", r.no_rate},
                {"refuse_rate", r.refuse_rate},
                {"unparseable_rate", r.unparseable_rate},
                {"attacc_mllm", r.attacc_mllm}};
}

json to_json(const RowCheck& r) {
    return json{{"pass", r.pass},
                {"tpr_fnr_residual", r.tpr_fnr_residual},
                {"fpr_tnr_residual", r.fpr_tnr_residual},
                {"mixture_residual", r.mixture_residual}};
}

json to_json(const TableRow& r) {
    auto num = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
    return json{{"attacc_mllm", num(r.attacc_mllm)}, {"attacc_curr", num(r.attacc_curr)}, {"tpr", num(r.tpr)},
                {"fnr", num(r.fnr)},                 {"fpr", num(r.fpr)},                 {"tnr", num(r.tnr)}};
}

TableRow parse_table_row(const json& j) {
    auto get = [&](const char* name) {
        const auto& v = j.at(name);
        return v.is_null() ? std::nan("") : v.get<double>();
    };
    return TableRow{get("attacc_mllm"), get("attacc_curr"), get("tpr"), get("fnr"), get("fpr"), get("tnr")};
}

json to_json(const std::map<std::string, FieldStats>& agg) {
    json j = json::object();
    for (const auto& [name, s] : agg) j[name] = {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
    return j;
}

}  // namespace mieval
