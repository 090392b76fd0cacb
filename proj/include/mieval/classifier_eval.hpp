#pragma once

// Classifier-based success criterion and the false-positive predicates over
// prediction manifests and oracle labels.

#include <span>
#include <string>
#include <vector>

#include "mieval/corpus.hpp"
#include "mieval/metrics.hpp"

namespace mieval {

enum class Outcome { TP, FP, TN, FN };

std::string_view to_string(Outcome o);

struct OutcomeRecord {
    std::string image_id;
    IdentityLabel target;
    bool oracle_positive = false;
    bool curr_success = false;
    Outcome outcome = Outcome::TN;

    bool operator==(const OutcomeRecord&) const = default;
};

Outcome outcome_of(bool oracle_positive, bool curr_success);

/// E predicts `target`. Throws ValidationError unless the entry is an eval_E prediction.
bool curr_success(const PredictionEntry& e_pred, const IdentityLabel& target);

/// Type-I condition for any classifier f and probe x: f(x) = target while the
/// oracle says x does not depict target. Every false-positive predicate below
/// is this function with a particular role binding.
bool type1_condition(const PredictionEntry& model_pred, const OracleLabel& oracle, const IdentityLabel& target);

/// T(x^r_y) = y and oracle mismatch. Throws on a non-target_T entry or an
/// oracle label for a different target.
bool is_mi_false_positive(const PredictionEntry& t_pred, const OracleLabel& oracle, const IdentityLabel& target);

/// T(x^r_y) = E(x^r_y) = y and oracle mismatch.
bool is_transferred_type1(const PredictionEntry& t_pred, const PredictionEntry& e_pred, const OracleLabel& oracle,
                          const IdentityLabel& target);

struct Classification {
    std::vector<OutcomeRecord> outcomes;  // same order as the input reconstructions
    ConfusionCounts counts;
};

/// Joins every reconstruction with its E prediction and effective oracle label
/// (human_majority over mllm). Any gap aborts with a CoverageError listing the
/// missing image ids.
Classification classify_outcomes(std::span<const ImageRecord> reconstructions, const PredictionTable& e_preds,
                                 const OracleTable& oracle_labels);

namespace serial {
/// Single-threaded reference for classify_outcomes.
Classification classify_outcomes(std::span<const ImageRecord> reconstructions, const PredictionTable& e_preds,
                                 const OracleTable& oracle_labels);
}  // namespace serial

json to_json(const OutcomeRecord& r);
std::string outcomes_to_ndjson(std::span<const OutcomeRecord> outcomes);

}  // namespace mieval
