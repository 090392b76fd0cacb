#include "mieval/prompts.hpp"

#include <sstream>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"

namespace mieval::fixtures {
extern const std::string_view prompt_face_v1;
extern const std::string_view prompt_dog_v1;
extern const std::string_view prompt_generic_v1;
extern const std::string_view prompt_task_v1;
extern const std::string_view prompt_answer_constraint_v1;
extern const std::string_view prompt_questions_v1;
extern const std::string_view prompt_identity_removal_v1;
}  // namespace mieval::fixtures

namespace mieval {

std::string_view to_string(QuestionVariant v) {
    switch (v) {
        case QuestionVariant::task_in_image: return "task_in_image";
        case QuestionVariant::v1: return "v1";
        case QuestionVariant::v2: return "v2";
        case QuestionVariant::v3: return "v3";
    }
    return "?";
}

QuestionVariant parse_question_variant(std::string_view s) {
    if (s == "task_in_image") return QuestionVariant::task_in_image;
    if (s == "v1") return QuestionVariant::v1;
    if (s == "v2") return QuestionVariant::v2;
    if (s == "v3") return QuestionVariant::v3;
    throw ValidationError("unknown question variant '" + std::string(s) + "'");
}

std::string_view prompt_fixture_version() { return "prompts/v1"; }

std::array<std::string, 3> list_question_variants() {
    std::array<std::string, 3> out;
    std::istringstream in{std::string(fixtures::prompt_questions_v1)};
    std::string line;
    std::size_t i = 0;
    while (i < out.size() && std::getline(in, line)) {
        if (!line.empty()) out[i++] = line;
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> identity_removal_table() {
    std::vector<std::pair<std::string, std::string>> table;
    std::istringstream in{std::string(fixtures::prompt_identity_removal_v1)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        table.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return table;
}

namespace {

void replace_all(std::string& text, const std::string& from, const std::string& to) {
    if (from.empty()) return;
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

std::string render_prompt(const PromptSpec& spec) {
    if (spec.identity_terms_removed && spec.domain_kind == DomainKind::generic) {
        throw ValidationError("identity-removed prompt variant is only defined for identity tasks (face, dog)");
    }
    std::string_view preamble;
    switch (spec.domain_kind) {
        case DomainKind::face: preamble = fixtures::prompt_face_v1; break;
        case DomainKind::dog: preamble = fixtures::prompt_dog_v1; break;
        case DomainKind::generic: preamble = fixtures::prompt_generic_v1; break;
    }
    std::string task;
    if (spec.question_variant == QuestionVariant::task_in_image) {
        task = fixtures::prompt_task_v1;
    } else {
        const auto questions = list_question_variants();
        task = questions[static_cast<std::size_t>(spec.question_variant) - 1];
    }
    std::string text = std::string(preamble) + " " + task;
    if (!spec.answer_constraint.empty()) text += " " + spec.answer_constraint;
    if (spec.identity_terms_removed) {
        for (const auto& [from, to] : identity_removal_table()) replace_all(text, from, to);
    }
    return text;
}

std::string prompt_hash(const PromptSpec& spec) { return sha256_hex(render_prompt(spec)); }

json to_json(const PromptSpec& spec) {
    return json{{"domain_kind", std::string(to_string(spec.domain_kind))},
                {"question_variant", std::string(to_string(spec.question_variant))},
                {"identity_terms_removed", spec.identity_terms_removed},
                {"answer_constraint", spec.answer_constraint},
                {"fixture_version", std::string(prompt_fixture_version())}};
}

PromptSpec parse_prompt_spec(const json& j) {
    PromptSpec s;
    if (j.contains("domain_kind")) s.domain_kind = parse_domain_kind(j.at("domain_kind").get<std::string>());
    if (j.contains("question_variant")) {
        s.question_variant = parse_question_variant(j.at("question_variant").get<std::string>());
    }
    s.identity_terms_removed = j.value("identity_terms_removed", false);
    s.answer_constraint = j.value("answer_constraint", s.answer_constraint);
    return s;
}

}  // namespace mieval
