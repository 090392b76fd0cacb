#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mieval/corpus.hpp"

namespace mieval {

/// task_in_image keeps the instruction "do the task in the image."; v1..v3
/// replace it with one of the explicit questions.
enum class QuestionVariant { task_in_image, v1, v2, v3 };

std::string_view to_string(QuestionVariant v);
QuestionVariant parse_question_variant(std::string_view s);

struct PromptSpec {
    DomainKind domain_kind = DomainKind::face;
    QuestionVariant question_variant = QuestionVariant::task_in_image;
    bool identity_terms_removed = false;
    std::string answer_constraint = "Only answer yes or no";

    bool operator==(const PromptSpec&) const = default;
};

/// Version tag of the embedded prompt fixtures; recorded in run records.
std::string_view prompt_fixture_version();

/// Deterministic prompt text. Throws ValidationError for the identity-removed
/// variant of the generic domain.
std::string render_prompt(const PromptSpec& spec);

/// SHA-256 of render_prompt(spec).
std::string prompt_hash(const PromptSpec& spec);

/// The three explicit question wordings, in v1, v2, v3 order.
std::array<std::string, 3> list_question_variants();

/// Ordered literal substitutions used for identity_terms_removed.
std::vector<std::pair<std::string, std::string>> identity_removal_table();

json to_json(const PromptSpec& spec);
PromptSpec parse_prompt_spec(const json& j);

}  // namespace mieval
