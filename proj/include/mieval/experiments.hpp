#pragma once

// The three studies (MLLM selection, Type-I transfer, reassessment), their run
// records and the per-setup results report.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mieval/classifier_eval.hpp"
#include "mieval/clock.hpp"
#include "mieval/composer.hpp"
#include "mieval/corpus.hpp"
#include "mieval/gateway.hpp"
#include "mieval/metrics.hpp"
#include "mieval/prompts.hpp"
#include "mieval/provider.hpp"

namespace mieval {

/// Shared plumbing for runners that query a provider.
struct ExperimentContext {
    const ImageCatalog* corpus = nullptr;
    Provider* provider = nullptr;
    ProviderPolicy policy;
    Clock* clock = nullptr;         // steady clock when null
    VerdictCache* cache = nullptr;
    LayoutSpec layout;
    PromptSpec prompt;
    ImageLoader loader;             // file loader with hash checks when empty
    std::filesystem::path image_dir;  // composed PNGs are written here when set
};

struct EligibilityCriteria {
    double min_pos_yes = 0.85;
    double min_neg_no = 0.85;
    double max_refuse = 0.05;

    void validate() const;
};

/// Empty when eligible; otherwise one line per unmet criterion.
std::vector<std::string> eligibility_failures(const MllmReport& positive, const MllmReport& negative,
                                              const EligibilityCriteria& criteria);

struct SelectionConfig {
    std::string dataset_id;
    DomainKind domain_kind = DomainKind::face;
    std::size_t k = 4;
    std::size_t n_pairs = 100;
    std::uint64_t seed = 0;
    EligibilityCriteria criteria;
};

struct SelectionResult {
    std::vector<EvalQuery> queries;  // positives then negatives
    std::vector<Verdict> verdicts;
    MllmReport positive;
    MllmReport negative;
    CostLedger ledger;
    bool eligible = false;
    std::vector<std::string> unmet;
};

/// Throws ValidationError when fewer than n_pairs probes qualify for either
/// pair kind, ProviderError when any query could not be evaluated.
SelectionResult run_selection_bench(const ExperimentContext& ctx, const SelectionConfig& config);

struct TransferConfig {
    std::uint64_t seed = 0;
};

struct NaturalAssignment {
    std::string image_id;
    IdentityLabel target;
    bool hit = false;
};

struct TransferResult {
    std::size_t n = 0;
    Rate fp_mi_negatives;
    Rate fp_natural_negatives;
    std::vector<std::string> mi_negative_ids;
    std::vector<NaturalAssignment> natural;
    bool pinned_pool = false;

    double fp_rate_mi_negatives() const { return fp_mi_negatives.value().value_or(0.0); }
    double fp_rate_natural_negatives() const { return fp_natural_negatives.value().value_or(0.0); }
};

/// MI negatives are the setup's reconstructions whose effective oracle label
/// rejects the target. Natural negatives come from natural_control records of
/// d_priv when the corpus has them (identity = pinned target), otherwise from
/// n public images, each assigned a uniformly random private identity.
TransferResult run_transfer_experiment(const MISetup& setup, const ImageCatalog& corpus,
                                       const PredictionTable& e_predictions, const OracleTable& oracle_labels,
                                       const TransferConfig& config);

struct ReassessmentConfig {
    std::size_t k = 4;
    int repeats = 1;
    std::uint64_t seed = 0;
    bool reseed_per_repeat = true;  // false reuses `seed` for every repeat
};

struct RepeatResult {
    std::uint64_t seed = 0;
    std::vector<EvalQuery> queries;
    std::vector<Verdict> verdicts;
    MllmReport mllm;
    Classification classification;
    RateReport rates;
    TableRow row;
    RowCheck check;
};

struct ReassessmentResult {
    MISetup setup;
    std::vector<RepeatResult> runs;
    std::map<std::string, FieldStats> aggregate;  // empty for a single repeat
    CostLedger ledger;
};

std::uint64_t repeat_seed(const ReassessmentConfig& config, int repeat);

/// Verdicts become mllm oracle labels (yes -> match; no, refuse and
/// unparseable -> no match); `human` labels override them.
ReassessmentResult run_reassessment(const ExperimentContext& ctx, const MISetup& setup,
                                    const PredictionTable& e_predictions, const OracleTable* human,
                                    const ReassessmentConfig& config);

OracleTable oracle_from_verdicts(std::span<const EvalQuery> queries, std::span<const Verdict> verdicts);

// ---------------------------------------------------------------------------
// Run records

enum class ExperimentKind { selection, transfer, reassessment };

std::string_view to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(std::string_view s);

struct RunRecord {
    std::string run_id;
    std::string setup_id;
    ExperimentKind kind = ExperimentKind::reassessment;
    std::uint64_t seed = 0;
    std::string prompt_fixture_version;
    std::string model_id;
    std::string started_at;
    std::string finished_at;
    std::map<std::string, std::string> input_hashes;  // input file -> sha256
    std::map<std::string, std::string> artifacts;     // name -> path relative to the run directory
    CostLedger ledger;
    json config;
};

json to_json(const RunRecord& r);
RunRecord parse_run_record(const json& j);

/// <kind>-<setup>-s<seed>-<first 8 hex of sha256(config)>.
std::string make_run_id(ExperimentKind kind, std::string_view setup_id, std::uint64_t seed, const json& config);

/// Writes runs_dir/<run_id>/ with record.json plus `files` (name -> content).
/// An existing directory is never touched: the id gets a -2, -3, ... suffix.
/// Returns the final directory; record.run_id and artifacts are filled in.
std::filesystem::path write_run(const std::filesystem::path& runs_dir, RunRecord& record,
                                const std::map<std::string, std::string>& files);

std::map<std::string, std::string> hash_inputs(const std::map<std::string, std::filesystem::path>& inputs);

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
    MISetup setup;
    std::string run_id;
    std::size_t n = 0;
    TableRow row;                   // mean over repeats
    std::optional<TableRow> std;    // present for repeated runs
    RowCheck check;
};

json reassessment_report_json(const ReassessmentResult& r);
ReportRow report_row_from_json(const json& report, std::string run_id);

/// Rows sorted by (attack, d_pub, target_arch, eval_arch, setup_id).
void sort_report_rows(std::vector<ReportRow>& rows);

/// Collects reassessment runs under runs_dir, one row per setup: the run that
/// finished last (ties broken by run_id). A missing directory gives no rows.
std::vector<ReportRow> collect_report_rows(const std::filesystem::path& runs_dir);

std::string render_report_text(std::span<const ReportRow> rows);
json render_report_json(std::span<const ReportRow> rows);

}  // namespace mieval
