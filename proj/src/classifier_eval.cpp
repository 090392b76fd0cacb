#include "mieval/classifier_eval.hpp"

#include <cstdint>

#include "mieval/error.hpp"

namespace mieval {

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::TP: return "TP";
        case Outcome::FP: return "FP";
        case Outcome::TN: return "TN";
        case Outcome::FN: return "FN";
    }
    return "?";
}

Outcome outcome_of(bool oracle_positive, bool success) {
    if (oracle_positive) return success ? Outcome::TP : Outcome::FN;
    return success ? Outcome::FP : Outcome::TN;
}

bool curr_success(const PredictionEntry& e_pred, const IdentityLabel& target) {
    if (e_pred.model_role != ModelRole::eval_E) {
        throw ValidationError("curr_success needs an eval_E prediction for '" + e_pred.image_id + "'");
    }
    return e_pred.predicted_class == target;
}

bool type1_condition(const PredictionEntry& model_pred, const OracleLabel& oracle, const IdentityLabel& target) {
    if (!(oracle.target == target)) {
        throw ValidationError("oracle label for '" + oracle.image_id + "' targets " + to_string(oracle.target) +
                              ", expected " + to_string(target));
    }
    return model_pred.predicted_class == target && !oracle.matches_target;
}

bool is_mi_false_positive(const PredictionEntry& t_pred, const OracleLabel& oracle, const IdentityLabel& target) {
    if (t_pred.model_role != ModelRole::target_T) {
        throw ValidationError("is_mi_false_positive needs a target_T prediction for '" + t_pred.image_id + "'");
    }
    return type1_condition(t_pred, oracle, target);
}

bool is_transferred_type1(const PredictionEntry& t_pred, const PredictionEntry& e_pred, const OracleLabel& oracle,
                          const IdentityLabel& target) {
    if (e_pred.model_role != ModelRole::eval_E) {
        throw ValidationError("is_transferred_type1 needs an eval_E prediction for '" + e_pred.image_id + "'");
    }
    return is_mi_false_positive(t_pred, oracle, target) && type1_condition(e_pred, oracle, target);
}

namespace {

void check_coverage(std::span<const ImageRecord> recs, const PredictionTable& e_preds, const OracleTable& oracle) {
    std::vector<std::string> missing_preds;
    std::vector<std::string> missing_labels;
    for (const auto& r : recs) {
        if (!r.identity) {
            throw ValidationError("reconstruction '" + r.image_id + "' has no target identity");
        }
        if (e_preds.find(r.image_id, ModelRole::eval_E) == nullptr) missing_preds.push_back(r.image_id);
        if (oracle.resolve(r.image_id, *r.identity) == nullptr) missing_labels.push_back(r.image_id);
    }
    if (!missing_preds.empty() || !missing_labels.empty()) {
        std::string msg = "coverage gap: " + std::to_string(missing_preds.size()) + " missing E predictions, " +
                          std::to_string(missing_labels.size()) + " missing oracle labels";
        auto append = [&](const char* what, const std::vector<std::string>& ids) {
            if (ids.empty()) return;
            msg += std::string("; ") + what + ":";
            for (const auto& id : ids) msg += " " + id;
        };
        append("missing predictions", missing_preds);
        append("missing labels", missing_labels);
        throw CoverageError(msg, std::move(missing_preds), std::move(missing_labels));
    }
}

OutcomeRecord classify_one(const ImageRecord& r, const PredictionTable& e_preds, const OracleTable& oracle) {
    const IdentityLabel& target = *r.identity;
    OutcomeRecord o;
    o.image_id = r.image_id;
    o.target = target;
    o.oracle_positive = oracle.resolve(r.image_id, target)->matches_target;
    o.curr_success = curr_success(*e_preds.find(r.image_id, ModelRole::eval_E), target);
    o.outcome = outcome_of(o.oracle_positive, o.curr_success);
    return o;
}

void tally(ConfusionCounts& c, Outcome o) {
    switch (o) {
        case Outcome::TP: ++c.tp; break;
        case Outcome::FP: ++c.fp; break;
        case Outcome::TN: ++c.tn; break;
        case Outcome::FN: ++c.fn; break;
    }
}

}  // namespace

Classification classify_outcomes(std::span<const ImageRecord> reconstructions, const PredictionTable& e_preds,
                                 const OracleTable& oracle_labels) {
    check_coverage(reconstructions, e_preds, oracle_labels);
    Classification out;
    out.outcomes.resize(reconstructions.size());
    const auto n = static_cast<std::int64_t>(reconstructions.size());
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

#pragma omp parallel for schedule(static) reduction(+ : tp, fp, tn, fn)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        out.outcomes[idx] = classify_one(reconstructions[idx], e_preds, oracle_labels);
        switch (out.outcomes[idx].outcome) {
            case Outcome::TP: ++tp; break;
            case Outcome::FP: ++fp; break;
            case Outcome::TN: ++tn; break;
            case Outcome::FN: ++fn; break;
        }
    }
    out.counts = ConfusionCounts{tp, fp, tn, fn};
    return out;
}

Classification serial::classify_outcomes(std::span<const ImageRecord> reconstructions, const PredictionTable& e_preds,
                                         const OracleTable& oracle_labels) {
    check_coverage(reconstructions, e_preds, oracle_labels);
    Classification out;
    out.outcomes.reserve(reconstructions.size());
    for (const auto& r : reconstructions) {
        out.outcomes.push_back(classify_one(r, e_preds, oracle_labels));
        tally(out.counts, out.outcomes.back().outcome);
    }
    return out;
}

json to_json(const OutcomeRecord& r) {
    return json{{"image_id", r.image_id},
                {"target", to_json(r.target)},
                {"oracle_positive", r.oracle_positive},
                {"curr_success", r.curr_success},
                {"outcome", std::string(to_string(r.outcome))}};
}

std::string outcomes_to_ndjson(std::span<const OutcomeRecord> outcomes) {
    std::string out;
    for (const auto& o : outcomes) {
        out += to_json(o).dump();
        out += '\n';
    }
    return out;
}

}  // namespace mieval
