#include "mieval/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/rng.hpp"

namespace mieval {

namespace fs = std::filesystem;

namespace {

/// m distinct indices of [0, n) by partial Fisher-Yates, returned ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <typename T>
std::vector<T> sample(const std::vector<T>& items, std::size_t m, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<T> out;
    out.reserve(m);
    for (auto i : sample_indices(items.size(), m, rng)) out.push_back(items[i]);
    return out;
}

std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 10) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
        if (i > 0) out += ", ";
        out += ids[i];
    }
    if (ids.size() > limit) out += fmt::format(", ... ({} total)", ids.size());
    return out;
}

std::map<IdentityLabel, std::size_t> reference_counts(const MISetup& setup, const ImageCatalog& corpus) {
    std::map<IdentityLabel, std::size_t> counts;
    for (const auto& r : reference_pool(setup, corpus)) ++counts[*r.identity];
    return counts;
}

struct Evaluated {
    std::vector<Verdict> verdicts;
    CostLedger ledger;
};

/// Composes `queries` (filling composed_hash) and evaluates them in one batch.
Evaluated compose_and_evaluate(const ExperimentContext& ctx, std::vector<EvalQuery>& queries,
                               const fs::path& image_dir) {
    if (ctx.corpus == nullptr || ctx.provider == nullptr) {
        throw ValidationError("experiment context needs a corpus and a provider");
    }
    const ImageLoader load = ctx.loader ? ctx.loader : make_file_loader(*ctx.corpus, true);
    compose_batch(queries, ctx.layout, load, image_dir);

    ImageBytesLoader bytes;
    if (!image_dir.empty()) {
        bytes = png_directory_loader(image_dir);
    } else {
        bytes = [&](const EvalQuery& q) {
            return encode_png(compose_query_image(q.probe, q.references, ctx.layout, load).image);
        };
    }
    SteadyClock steady;
    Clock& clock = ctx.clock != nullptr ? *ctx.clock : steady;
    Gateway gateway(*ctx.provider, ctx.policy, clock, ctx.cache);
    BatchResult batch = gateway.run_batch(queries, ctx.prompt, bytes);
    if (!batch.failures.empty()) {
        std::vector<std::string> ids;
        for (const auto& f : batch.failures) ids.push_back(f.query_id);
        throw ProviderError(batch.failures.front().kind,
                            fmt::format("{} of {} queries failed ({}); first error: {}", batch.failures.size(),
                                        queries.size(), join_ids(ids), batch.failures.front().message));
    }
    return {batch.answered(), batch.ledger};
}

ExperimentContext with_ref_count(const ExperimentContext& ctx, std::size_t k) {
    ExperimentContext out = ctx;
    out.layout.ref_count = static_cast<int>(k);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Selection benchmark

void EligibilityCriteria::validate() const {
    for (double x : {min_pos_yes, min_neg_no, max_refuse}) {
        if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("eligibility criteria must lie in [0,1]");
    }
}

std::vector<std::string> eligibility_failures(const MllmReport& positive, const MllmReport& negative,
                                              const EligibilityCriteria& criteria) {
    criteria.validate();
    std::vector<std::string> out;
    if (positive.yes_rate < criteria.min_pos_yes) {
        out.push_back(fmt::format("positive yes rate {:.4f} < {:.4f}", positive.yes_rate, criteria.min_pos_yes));
    }
    if (negative.no_rate < criteria.min_neg_no) {
        out.push_back(fmt::format("negative no rate {:.4f} < {:.4f}", negative.no_rate, criteria.min_neg_no));
    }
    if (positive.refuse_rate > criteria.max_refuse) {
        out.push_back(
            fmt::format("positive refuse rate {:.4f} > {:.4f}", positive.refuse_rate, criteria.max_refuse));
    }
    if (negative.refuse_rate > criteria.max_refuse) {
        out.push_back(
            fmt::format("negative refuse rate {:.4f} > {:.4f}", negative.refuse_rate, criteria.max_refuse));
    }
    return out;
}

SelectionResult run_selection_bench(const ExperimentContext& ctx_in, const SelectionConfig& config) {
    config.criteria.validate();
    if (config.k == 0 || config.n_pairs == 0) throw ValidationError("select-bench: k and n_pairs must be positive");
    if (ctx_in.corpus == nullptr) throw ValidationError("select-bench: no corpus");
    const ExperimentContext ctx = with_ref_count(ctx_in, config.k);
    const ImageCatalog& corpus = *ctx.corpus;

    MISetup setup;
    setup.setup_id = "select-" + config.dataset_id;
    setup.attack_name = "selection";
    setup.d_priv = config.dataset_id;
    setup.domain_kind = config.domain_kind;

    const auto probes = probe_pool(setup, corpus, PairKind::positive_control);
    const auto counts = reference_counts(setup, corpus);

    std::vector<ImageRecord> pos_ok;
    std::vector<ImageRecord> neg_ok;
    for (const auto& p : probes) {
        auto it = counts.find(*p.identity);
        std::size_t own = it == counts.end() ? 0 : it->second;
        if (p.provenance == Provenance::private_train && own > 0) --own;
        if (own >= config.k) pos_ok.push_back(p);
        const bool other = std::any_of(counts.begin(), counts.end(), [&](const auto& kv) {
            return !(kv.first == *p.identity) && kv.second >= config.k;
        });
        if (other) neg_ok.push_back(p);
    }
    if (pos_ok.size() < config.n_pairs || neg_ok.size() < config.n_pairs) {
        throw ValidationError(fmt::format(
            "select-bench: insufficient identities in '{}': {} positive and {} negative probe candidates for "
            "n_pairs={} with k={}",
            config.dataset_id, pos_ok.size(), neg_ok.size(), config.n_pairs, config.k));
    }

    const auto pos_probes = sample(pos_ok, config.n_pairs, derive_seed(config.seed, "pos-probes"));
    const auto neg_probes = sample(neg_ok, config.n_pairs, derive_seed(config.seed, "neg-probes"));
    auto pos = build_queries_for_probes(setup, corpus, pos_probes, PairKind::positive_control, config.k,
                                        derive_seed(config.seed, "pos"));
    auto neg = build_queries_for_probes(setup, corpus, neg_probes, PairKind::negative_control, config.k,
                                        derive_seed(config.seed, "neg"));
    if (!pos.skipped.empty() || !neg.skipped.empty()) {
        throw ValidationError("select-bench: query construction skipped probes unexpectedly");
    }

    SelectionResult result;
    result.queries = std::move(pos.queries);
    result.queries.insert(result.queries.end(), std::make_move_iterator(neg.queries.begin()),
                          std::make_move_iterator(neg.queries.end()));
    auto evaluated = compose_and_evaluate(ctx, result.queries, ctx.image_dir);
    result.verdicts = std::move(evaluated.verdicts);
    result.ledger = evaluated.ledger;

    const auto split = static_cast<std::ptrdiff_t>(config.n_pairs);
    result.positive = mllm_report(std::span<const Verdict>(result.verdicts.data(), config.n_pairs));
    result.negative = mllm_report(std::span<const Verdict>(result.verdicts.begin() + split, result.verdicts.end()));
    result.unmet = eligibility_failures(result.positive, result.negative, config.criteria);
    result.eligible = result.unmet.empty();
    return result;
}

// ---------------------------------------------------------------------------
// Transfer experiment

TransferResult run_transfer_experiment(const MISetup& setup, const ImageCatalog& corpus,
                                       const PredictionTable& e_predictions, const OracleTable& oracle_labels,
                                       const TransferConfig& config) {
    const auto recs = probe_pool(setup, corpus, PairKind::reconstruction);

    std::vector<std::string> missing_labels;
    std::vector<ImageRecord> mi_negatives;
    for (const auto& r : recs) {
        const OracleLabel* label = oracle_labels.resolve(r.image_id, *r.identity);
        if (label == nullptr) {
            missing_labels.push_back(r.image_id);
        } else if (!label->matches_target) {
            mi_negatives.push_back(r);
        }
    }
    if (!missing_labels.empty()) {
        throw CoverageError("transfer: oracle labels missing for " + std::to_string(missing_labels.size()) +
                                " reconstructions: " + join_ids(missing_labels),
                            {}, missing_labels);
    }
    if (mi_negatives.empty()) {
        throw ValidationError("transfer: setup '" + setup.setup_id + "' has no MI-generated negatives");
    }

    TransferResult result;
    result.n = mi_negatives.size();

    // Private identities of d_priv, the universe for natural-negative targets.
    std::set<IdentityLabel> private_ids;
    for (const auto& r : corpus.records()) {
        if ((r.provenance == Provenance::private_train || r.provenance == Provenance::private_test) && r.identity &&
            r.identity->dataset_id == setup.d_priv) {
            private_ids.insert(*r.identity);
        }
    }

    std::vector<std::pair<ImageRecord, IdentityLabel>> natural;
    const auto pinned = filter_records(corpus, [&](const ImageRecord& r) {
        return r.provenance == Provenance::natural_control && r.identity && r.identity->dataset_id == setup.d_priv &&
               (!r.setup_id || *r.setup_id == setup.setup_id);
    });
    if (!pinned.empty()) {
        result.pinned_pool = true;
        if (pinned.size() < result.n) {
            throw ValidationError(fmt::format("transfer: natural-control pool has {} images, need {}", pinned.size(),
                                              result.n));
        }
        for (const auto& r : sample(pinned, result.n, derive_seed(config.seed, "natural-pool"))) {
            natural.emplace_back(r, *r.identity);
        }
    } else {
        const auto pub = filter_records(corpus, RecordFilter{.provenance = Provenance::public_data});
        std::vector<std::string> overlap;
        for (const auto& r : pub) {
            if (r.identity && private_ids.contains(*r.identity)) overlap.push_back(r.image_id);
        }
        if (!overlap.empty()) {
            throw ValidationError("transfer: public images share identities with " + setup.d_priv + ": " +
                                  join_ids(overlap));
        }
        if (pub.size() < result.n) {
            throw ValidationError(
                fmt::format("transfer: public pool has {} images, need {}", pub.size(), result.n));
        }
        if (private_ids.empty()) throw ValidationError("transfer: no private identities for " + setup.d_priv);
        const std::vector<IdentityLabel> targets(private_ids.begin(), private_ids.end());
        Rng assign(derive_seed(config.seed, "natural-target"));
        for (const auto& r : sample(pub, result.n, derive_seed(config.seed, "natural-pool"))) {
            natural.emplace_back(r, targets[static_cast<std::size_t>(assign.below(targets.size()))]);
        }
    }

    std::vector<std::string> missing_preds;
    auto e_of = [&](const std::string& id) {
        const PredictionEntry* e = e_predictions.find(id, ModelRole::eval_E);
        if (e == nullptr) missing_preds.push_back(id);
        return e;
    };

    std::uint64_t mi_hits = 0;
    for (const auto& r : mi_negatives) {
        result.mi_negative_ids.push_back(r.image_id);
        if (const auto* e = e_of(r.image_id)) mi_hits += curr_success(*e, *r.identity) ? 1 : 0;
    }
    std::uint64_t natural_hits = 0;
    for (const auto& [r, target] : natural) {
        NaturalAssignment a{r.image_id, target, false};
        if (const auto* e = e_of(r.image_id)) a.hit = curr_success(*e, target);
        natural_hits += a.hit ? 1 : 0;
        result.natural.push_back(std::move(a));
    }
    if (!missing_preds.empty()) {
        throw CoverageError("transfer: E predictions missing for " + std::to_string(missing_preds.size()) +
                                " images: " + join_ids(missing_preds),
                            missing_preds, {});
    }
    result.fp_mi_negatives = {mi_hits, result.n};
    result.fp_natural_negatives = {natural_hits, natural.size()};
    return result;
}

// ---------------------------------------------------------------------------
// Reassessment

std::uint64_t repeat_seed(const ReassessmentConfig& config, int repeat) {
    return config.reseed_per_repeat ? config.seed ^ static_cast<std::uint64_t>(repeat) : config.seed;
}

OracleTable oracle_from_verdicts(std::span<const EvalQuery> queries, std::span<const Verdict> verdicts) {
    std::map<std::string_view, const EvalQuery*> by_id;
    for (const auto& q : queries) by_id.emplace(q.query_id, &q);
    std::vector<OracleLabel> labels;
    labels.reserve(verdicts.size());
    for (const auto& v : verdicts) {
        auto it = by_id.find(v.query_id);
        if (it == by_id.end()) throw ValidationError("verdict for unknown query '" + v.query_id + "'");
        labels.push_back(OracleLabel{it->second->probe.image_id, it->second->target, v.answer == Answer::yes,
                                     OracleSource::mllm});
    }
    return OracleTable(std::move(labels));
}

namespace {

NumericReport row_numeric(const TableRow& r) {
    return {{"attacc_mllm", r.attacc_mllm}, {"attacc_curr", r.attacc_curr}, {"tpr", r.tpr},
            {"fnr", r.fnr},                 {"fpr", r.fpr},                 {"tnr", r.tnr}};
}

TableRow row_from_stats(const std::map<std::string, FieldStats>& s, bool want_std) {
    auto g = [&](const char* k) { return want_std ? s.at(k).std : s.at(k).mean; };
    return TableRow{g("attacc_mllm"), g("attacc_curr"), g("tpr"), g("fnr"), g("fpr"), g("tnr")};
}

}  // namespace

ReassessmentResult run_reassessment(const ExperimentContext& ctx_in, const MISetup& setup,
                                    const PredictionTable& e_predictions, const OracleTable* human,
                                    const ReassessmentConfig& config) {
    if (config.repeats < 1) throw ValidationError("reassessment: repeats must be >= 1");
    if (ctx_in.corpus == nullptr) throw ValidationError("reassessment: no corpus");
    const ExperimentContext ctx = with_ref_count(ctx_in, config.k);
    const auto recs = probe_pool(setup, *ctx.corpus, PairKind::reconstruction);

    ReassessmentResult result;
    result.setup = setup;
    for (int r = 0; r < config.repeats; ++r) {
        RepeatResult run;
        run.seed = repeat_seed(config, r);
        auto qs = build_queries_for_probes(setup, *ctx.corpus, recs, PairKind::reconstruction, config.k, run.seed);
        if (!qs.skipped.empty()) {
            std::vector<std::string> ids;
            for (const auto& s : qs.skipped) ids.push_back(s.probe_id + " (" + s.reason + ")");
            throw ValidationError("reassessment: cannot build queries for " + std::to_string(ids.size()) +
                                  " reconstructions: " + join_ids(ids, 5));
        }
        run.queries = std::move(qs.queries);
        fs::path image_dir = ctx.image_dir;
        if (!image_dir.empty() && config.repeats > 1) image_dir /= "repeat-" + std::to_string(r + 1);
        auto evaluated = compose_and_evaluate(ctx, run.queries, image_dir);
        run.verdicts = std::move(evaluated.verdicts);
        result.ledger += evaluated.ledger;

        run.mllm = mllm_report(run.verdicts);
        OracleTable labels = oracle_from_verdicts(run.queries, run.verdicts);
        if (human != nullptr) labels = OracleTable::merged(labels, *human);
        run.classification = classify_outcomes(recs, e_predictions, labels);
        run.rates = rates_from_counts(run.classification.counts);
        run.row = table_row_from(run.mllm, run.rates);
        if (human != nullptr) {
            // With overrides the oracle-positive fraction is no longer the yes rate.
            std::size_t pos = 0;
            for (const auto& o : run.classification.outcomes) pos += o.oracle_positive ? 1 : 0;
            run.row.attacc_mllm = 100.0 * static_cast<double>(pos) / static_cast<double>(recs.size());
        }
        run.check = check_table_row(run.row);
        result.runs.push_back(std::move(run));
    }
    if (config.repeats > 1) {
        std::vector<NumericReport> reports;
        for (const auto& run : result.runs) {
            NumericReport n = to_numeric(run.rates);
            for (auto& [k, v] : to_numeric(run.mllm)) n[k] = v;
            reports.push_back(std::move(n));
        }
        result.aggregate = aggregate_runs(reports);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Run records

std::string_view to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::selection: return "selection";
        case ExperimentKind::transfer: return "transfer";
        case ExperimentKind::reassessment: return "reassessment";
    }
    return "?";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
    if (s == "selection") return ExperimentKind::selection;
    if (s == "transfer") return ExperimentKind::transfer;
    if (s == "reassessment") return ExperimentKind::reassessment;
    throw ValidationError("unknown experiment_kind '" + std::string(s) + "'");
}

json to_json(const RunRecord& r) {
    return json{{"run_id", r.run_id},
                {"setup_id", r.setup_id},
                {"experiment_kind", to_string(r.kind)},
                {"seed", r.seed},
                {"prompt_fixture_version", r.prompt_fixture_version},
                {"model_id", r.model_id},
                {"started_at", r.started_at},
                {"finished_at", r.finished_at},
                {"input_hashes", r.input_hashes},
                {"artifacts", r.artifacts},
                {"cost", to_json(r.ledger)},
                {"config", r.config}};
}

RunRecord parse_run_record(const json& j) {
    try {
        RunRecord r;
        r.run_id = j.at("run_id").get<std::string>();
        r.setup_id = j.at("setup_id").get<std::string>();
        r.kind = parse_experiment_kind(j.at("experiment_kind").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.prompt_fixture_version = j.value("prompt_fixture_version", "");
        r.model_id = j.value("model_id", "");
        r.started_at = j.value("started_at", "");
        r.finished_at = j.value("finished_at", "");
        r.input_hashes = j.value("input_hashes", std::map<std::string, std::string>{});
        r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
        if (j.contains("cost")) {
            const auto& c = j.at("cost");
            r.ledger.queries = c.value("queries", std::size_t{0});
            r.ledger.provider_calls = c.value("provider_calls", std::size_t{0});
            r.ledger.cache_hits = c.value("cache_hits", std::size_t{0});
            r.ledger.attempts = c.value("attempts", std::size_t{0});
            r.ledger.failures = c.value("failures", std::size_t{0});
            r.ledger.unit_cost = Money::from_dollars(c.value("unit_cost", 0.0));
            r.ledger.total_cost = Money::from_dollars(c.value("total_cost", 0.0));
        }
        r.config = j.value("config", json::object());
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("run record: ") + e.what());
    }
}

std::string make_run_id(ExperimentKind kind, std::string_view setup_id, std::uint64_t seed, const json& config) {
    return fmt::format("{}-{}-s{}-{}", to_string(kind), sanitize_id(setup_id), seed,
                       sha256_hex(config.dump()).substr(0, 8));
}

fs::path write_run(const fs::path& runs_dir, RunRecord& record, const std::map<std::string, std::string>& files) {
    if (record.run_id.empty()) record.run_id = make_run_id(record.kind, record.setup_id, record.seed, record.config);
    fs::create_directories(runs_dir);
    const std::string base = record.run_id;
    fs::path dir = runs_dir / base;
    for (int suffix = 2; !fs::create_directory(dir); ++suffix) {
        record.run_id = base + "-" + std::to_string(suffix);
        dir = runs_dir / record.run_id;
    }
    for (const auto& [name, content] : files) {
        write_file_atomic(dir / name, content);
        record.artifacts[fs::path(name).stem().string()] = name;
    }
    write_file_atomic(dir / "record.json", to_json(record).dump(2) + "\n");
    return dir;
}

std::map<std::string, std::string> hash_inputs(const std::map<std::string, fs::path>& inputs) {
    std::map<std::string, std::string> out;
    for (const auto& [name, path] : inputs) {
        if (path.empty()) continue;
        const auto bytes = read_binary_file(path);
        out[name] = sha256_hex(std::span<const std::uint8_t>(bytes));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report

json reassessment_report_json(const ReassessmentResult& r) {
    json runs = json::array();
    std::vector<NumericReport> rows;
    for (const auto& run : r.runs) {
        runs.push_back(json{{"seed", run.seed},
                            {"mllm", to_json(run.mllm)},
                            {"counts", to_json(run.classification.counts)},
                            {"rates", to_json(run.rates)},
                            {"row", to_json(run.row)},
                            {"check", to_json(run.check)}});
        rows.push_back(row_numeric(run.row));
    }
    json j{{"setup", to_json(r.setup)},
           {"n", r.runs.empty() ? 0 : r.runs.front().classification.outcomes.size()},
           {"repeats", runs}};
    TableRow mean = r.runs.front().row;
    if (r.runs.size() > 1) {
        const auto stats = aggregate_runs(rows);
        mean = row_from_stats(stats, false);
        j["std"] = to_json(row_from_stats(stats, true));
        j["aggregate"] = to_json(r.aggregate);
    } else {
        j["std"] = nullptr;
    }
    j["mean"] = to_json(mean);
    j["check"] = to_json(check_table_row(mean));
    return j;
}

ReportRow report_row_from_json(const json& report, std::string run_id) {
    try {
        ReportRow row;
        row.setup = parse_setup(report.at("setup"));
        row.run_id = std::move(run_id);
        row.n = report.at("n").get<std::size_t>();
        row.row = parse_table_row(report.at("mean"));
        if (!report.at("std").is_null()) row.std = parse_table_row(report.at("std"));
        row.check = check_table_row(row.row);
        return row;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("report: ") + e.what());
    }
}

void sort_report_rows(std::vector<ReportRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::tie(a.setup.attack_name, a.setup.d_pub, a.setup.target_arch, a.setup.eval_arch,
                        a.setup.setup_id) < std::tie(b.setup.attack_name, b.setup.d_pub, b.setup.target_arch,
                                                     b.setup.eval_arch, b.setup.setup_id);
    });
}

std::vector<ReportRow> collect_report_rows(const fs::path& runs_dir) {
    std::error_code ec;
    if (!fs::is_directory(runs_dir, ec)) return {};
    std::map<std::string, std::pair<std::string, ReportRow>> latest;  // setup -> (finished_at, row)
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        if (!fs::exists(dir / "record.json") || !fs::exists(dir / "report.json")) continue;
        const RunRecord rec = parse_run_record(json::parse(read_text_file(dir / "record.json")));
        if (rec.kind != ExperimentKind::reassessment) continue;
        ReportRow row = report_row_from_json(json::parse(read_text_file(dir / "report.json")), rec.run_id);
        auto it = latest.find(rec.setup_id);
        const auto key = std::make_pair(rec.finished_at, rec.run_id);
        if (it == latest.end() || key > std::make_pair(it->second.first, it->second.second.run_id)) {
            latest.insert_or_assign(rec.setup_id, std::make_pair(rec.finished_at, std::move(row)));
        }
    }
    std::vector<ReportRow> rows;
    for (auto& [_, v] : latest) rows.push_back(std::move(v.second));
    sort_report_rows(rows);
    return rows;
}

namespace {

std::string cell(double mean, const std::optional<double>& sd) {
    if (std::isnan(mean)) return "n/a";
    if (sd) return fmt::format("{:.2f}±{:.2f}", mean, *sd);
    return fmt::format("{:.2f}", mean);
}

// Display width; the ± sign is two bytes in UTF-8.
std::size_t width_of(const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80 ? 1 : 0;
    return w;
}

}  // namespace

std::string render_report_text(std::span<const ReportRow> rows) {
    const std::vector<std::string> header{"Attack", "D_priv", "D_pub", "T",  "E",  "n",        "AttAcc_MLLM",
                                          "AttAcc_Curr", "FP", "FN",   "TP", "TN", "Residual", "Check"};
    std::vector<std::vector<std::string>> table{header};
    for (const auto& r : rows) {
        auto sd = [&](double TableRow::*f) -> std::optional<double> {
            if (r.std) return (*r.std).*f;
            return std::nullopt;
        };
        const double residual = std::max({std::abs(r.check.tpr_fnr_residual), std::abs(r.check.fpr_tnr_residual),
                                          std::abs(r.check.mixture_residual)});
        table.push_back({r.setup.attack_name, r.setup.d_priv, r.setup.d_pub, r.setup.target_arch,
                         r.setup.eval_arch, std::to_string(r.n), cell(r.row.attacc_mllm, sd(&TableRow::attacc_mllm)),
                         cell(r.row.attacc_curr, sd(&TableRow::attacc_curr)), cell(r.row.fpr, sd(&TableRow::fpr)),
                         cell(r.row.fnr, sd(&TableRow::fnr)), cell(r.row.tpr, sd(&TableRow::tpr)),
                         cell(r.row.tnr, sd(&TableRow::tnr)), fmt::format("{:.2f}", residual),
                         r.check.pass ? "ok" : "FAIL"});
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : table) {
        for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width_of(line[c]));
    }
    std::string out;
    for (std::size_t i = 0; i < table.size(); ++i) {
        std::string line;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c > 0) line += "  ";
            const auto pad = widths[c] - width_of(table[i][c]);
            if (c < 5) {
                line += table[i][c] + std::string(pad, ' ');
            } else {
                line += std::string(pad, ' ') + table[i][c];
            }
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : widths) total += w;
            out += std::string(total + 2 * (widths.size() - 1), '-') + "\n";
        }
    }
    return out;
}

json render_report_json(std::span<const ReportRow> rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back(json{{"setup", to_json(r.setup)},
                           {"run_id", r.run_id},
                           {"n", r.n},
                           {"row", to_json(r.row)},
                           {"std", r.std ? to_json(*r.std) : json(nullptr)},
                           {"check", to_json(r.check)}});
    }
    return json{{"columns", {"attacc_mllm", "attacc_curr", "fpr", "fnr", "tpr", "tnr"}}, {"rows", arr}};
}

}  // namespace mieval
