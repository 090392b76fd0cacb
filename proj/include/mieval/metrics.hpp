#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mieval/io.hpp"
#include "mieval/verdict.hpp"

namespace mieval {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

/// A ratio that stays undefined when its denominator is zero.
struct Rate {
    std::uint64_t numerator = 0;
    std::uint64_t denominator = 0;

    std::optional<double> value() const {
        if (denominator == 0) return std::nullopt;
        return static_cast<double>(numerator) / static_cast<double>(denominator);
    }
};

struct RateReport {
    Rate attacc_curr;  // (tp + fp) / total
    Rate tpr;          // tp / (tp + fn)
    Rate fnr;
    Rate fpr;          // fp / (fp + tn)
    Rate tnr;
};

RateReport rates_from_counts(const ConfusionCounts& c);

/// p * tpr + (1 - p) * fpr, with p the oracle-positive fraction. Inputs must lie in [0, 1].
double mixture_attacc(double p_oracle_pos, double tpr, double fpr);

struct MllmReport {
    std::uint64_t total = 0;
    std::uint64_t yes = 0;
    std::uint64_t no = 0;
    std::uint64_t refuse = 0;
    std::uint64_t unparseable = 0;
    double yes_rate = 0;
    double no_rate = 0;
    double refuse_rate = 0;
    double unparseable_rate = 0;
    double attacc_mllm = 0;  // yes / total; refusals and unparseables are failures
};

/// Throws ValidationError on an empty list.
MllmReport mllm_report(std::span<const Verdict> verdicts);

using NumericReport = std::map<std::string, double>;

/// Defined fields only.
NumericReport to_numeric(const RateReport& r);
NumericReport to_numeric(const MllmReport& r);

struct FieldStats {
    double mean = 0;
    double std = 0;  // sample (n - 1) standard deviation
    std::size_t n = 0;
};

/// Per-field mean and sample std. Needs >= 2 reports with identical field sets.
std::map<std::string, FieldStats> aggregate_runs(std::span<const NumericReport> reports);

/// One published results row in percent.
struct TableRow {
    double attacc_mllm = 0;
    double attacc_curr = 0;
    double tpr = 0;
    double fnr = 0;
    double fpr = 0;
    double tnr = 0;
};

struct RowCheck {
    bool pass = false;
    double tpr_fnr_residual = 0;  // tpr + fnr - 100
    double fpr_tnr_residual = 0;  // fpr + tnr - 100
    double mixture_residual = 0;  // mixture(attacc_mllm, tpr, fpr) - attacc_curr
};

/// Complement and mixture-identity checks; each |residual| <= tolerance_pp to pass.
RowCheck check_table_row(const TableRow& row, double tolerance_pp = 0.2);

TableRow table_row_from(const MllmReport& mllm, const RateReport& rates);

json to_json(const ConfusionCounts& c);
json to_json(const RateReport& r);
json to_json(const MllmReport& r);
json to_json(const RowCheck& r);
json to_json(const TableRow& r);
TableRow parse_table_row(const json& j);
json to_json(const std::map<std::string, FieldStats>& agg);

}  // namespace mieval
