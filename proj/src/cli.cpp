#include "mieval/cli.hpp"

#include <chrono>
#include <cmath>
#include <csignal>
#include <iostream>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mieval/annotation.hpp"
#include "mieval/error.hpp"
#include "mieval/experiments.hpp"
#include "mieval/hash.hpp"
#include "mieval/rng.hpp"

namespace mieval::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
    fs::path images;
    fs::path setups;
    fs::path config;
    fs::path out = "out";
};

struct PromptOptions {
    std::string variant = "task_in_image";
    bool identity_removed = false;
    std::optional<std::string> domain;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--prompt-variant", variant, "task_in_image, v1, v2 or v3")->capture_default_str();
        cmd->add_flag("--identity-removed", identity_removed, "Strip identity terms from the prompt");
        cmd->add_option("--domain", domain, "face, dog or generic (default: the setup's domain)");
    }

    PromptSpec spec(DomainKind fallback) const {
        PromptSpec p;
        p.domain_kind = domain ? parse_domain_kind(*domain) : fallback;
        p.question_variant = parse_question_variant(variant);
        p.identity_terms_removed = identity_removed;
        render_prompt(p);  // rejects invalid combinations up front
        return p;
    }
};

struct ProviderSetup {
    ProviderConfig config;
    fs::path path;
    std::unique_ptr<Provider> provider;
    std::unique_ptr<Clock> clock;
};

ImageCatalog require_images(const Globals& g) {
    if (g.images.empty()) throw ValidationError("--images is required");
    return load_images(g.images);
}

MISetup require_setup(const Globals& g, const std::string& id) {
    if (g.setups.empty()) throw ValidationError("--setups is required");
    return load_setups(g.setups).at(id);
}

ProviderConfig load_config(const fs::path& path) {
    if (path.empty()) throw ConfigError("no provider config given (--config or --provider)");
    if (!fs::exists(path)) throw ConfigError("provider config not found: " + path.string());
    return load_provider_config(path);
}

/// Mock providers run on virtual time so the rate limiter costs nothing.
ProviderSetup open_provider(ProviderConfig config, fs::path path, const OracleTable* truth) {
    ProviderSetup s;
    s.path = std::move(path);
    s.provider = make_provider(config, truth);
    if (config.kind == "mock") {
        s.clock = std::make_unique<ManualClock>();
    } else {
        s.clock = std::make_unique<SteadyClock>();
    }
    s.config = std::move(config);
    return s;
}

void write_text(const fs::path& path, std::string_view text) { write_file_atomic(path, text); }

std::string pct(const Rate& r) {
    auto v = r.value();
    return v ? fmt::format("{:.2f}%", 100.0 * *v) : std::string("n/a");
}

json options_json(const std::vector<std::pair<std::string, json>>& kv) {
    json j = json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
}

std::string path_str(const fs::path& p) { return p.string(); }

// ---------------------------------------------------------------------------

struct ComposeCmd {
    std::string setup;
    std::string mode = "reconstruction";
    std::size_t refs = 4;
    std::uint64_t seed = 0;
    int cell = 224;
    int margin = 8;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("compose", "Build evaluation queries and composite images for a setup");
        c->add_option("--setup", setup, "Setup id")->required();
        c->add_option("--mode", mode, "reconstruction, positive or negative")->capture_default_str();
        c->add_option("--refs", refs, "Reference images per query")->capture_default_str();
        c->add_option("--seed", seed)->capture_default_str();
        c->add_option("--cell", cell, "Cell size in pixels")->capture_default_str();
        c->add_option("--margin", margin)->capture_default_str();
    }

    int run(const Globals& g, std::ostream& out, std::ostream& err) const {
        PairKind kind = PairKind::reconstruction;
        if (mode == "positive") {
            kind = PairKind::positive_control;
        } else if (mode == "negative") {
            kind = PairKind::negative_control;
        } else if (mode != "reconstruction") {
            kind = parse_pair_kind(mode);
        }
        const ImageCatalog corpus = require_images(g);
        const MISetup s = require_setup(g, setup);
        LayoutSpec layout;
        layout.ref_count = static_cast<int>(refs);
        layout.cell_px = cell;
        layout.margin_px = margin;
        layout.validate();

        QuerySet qs = build_query_set(s, corpus, kind, refs, seed);
        for (const auto& skip : qs.skipped) {
            err << "skipped " << skip.probe_id << ": " << skip.reason << "\n";
        }
        if (qs.queries.empty()) throw ValidationError("no queries could be built for setup '" + setup + "'");
        compose_batch(qs.queries, layout, make_file_loader(corpus, true), g.out / "images");
        write_text(g.out / "queries.ndjson", queries_to_ndjson(qs.queries));
        out << fmt::format("composed {} queries ({} skipped) -> {}\n", qs.queries.size(), qs.skipped.size(),
                           path_str(g.out / "queries.ndjson"));
        return kOk;
    }
};

// ---------------------------------------------------------------------------

struct JudgeCmd {
    fs::path queries;
    fs::path provider;
    fs::path truth;
    fs::path image_dir;
    fs::path cache;
    int repeats = 1;
    PromptOptions prompt;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("judge", "Ask the MLLM provider for a verdict on every query");
        c->add_option("--queries", queries, "queries.ndjson from compose")->required();
        c->add_option("--provider", provider, "Provider config (defaults to --config)");
        c->add_option("--truth", truth, "Oracle manifest the mock provider replays");
        c->add_option("--image-dir", image_dir, "Composite PNGs (default: images/ next to the queries)");
        c->add_option("--cache", cache, "Verdict cache directory (single repeat only)");
        c->add_option("--repeats", repeats, "Independent evaluation rounds")->capture_default_str()->check(
            CLI::PositiveNumber);
        prompt.add_to(c);
    }

    int run(const Globals& g, std::ostream& out, std::ostream& err) const {
        std::optional<ImageCatalog> catalog;
        if (!g.images.empty()) catalog = load_images(g.images);
        const auto qs = load_queries(queries, catalog ? &*catalog : nullptr);
        if (qs.empty()) throw ValidationError("no queries in " + queries.string());

        DomainKind domain = DomainKind::face;
        if (!g.setups.empty()) {
            const auto reg = load_setups(g.setups);
            if (const auto* s = reg.find(qs.front().setup_id)) domain = s->domain_kind;
        }
        const PromptSpec spec = prompt.spec(domain);

        const fs::path config_path = provider.empty() ? g.config : provider;
        ProviderConfig config = load_config(config_path);
        std::optional<OracleTable> truth_table;
        if (!truth.empty()) truth_table = load_oracle(truth);

        fs::path images = image_dir.empty() ? queries.parent_path() / "images" : image_dir;
        ImageBytesLoader bytes;
        if (fs::is_directory(images)) {
            bytes = png_directory_loader(images);
        } else if (config.kind != "mock") {
            throw ValidationError("composite images not found in " + images.string());
        }

        std::optional<VerdictCache> verdict_cache;
        if (!cache.empty() && repeats == 1) verdict_cache.emplace(cache);

        json reports = json::array();
        std::vector<NumericReport> numeric;
        CostLedger ledger;
        int exit = kOk;
        for (int r = 0; r < repeats; ++r) {
            ProviderConfig round = config;
            if (r > 0) round.mock_seed = derive_seed(config.mock_seed, static_cast<std::uint64_t>(r));
            auto setup = open_provider(round, config_path, truth_table ? &*truth_table : nullptr);
            Gateway gateway(*setup.provider, round.policy, *setup.clock, verdict_cache ? &*verdict_cache : nullptr);
            BatchResult batch = gateway.run_batch(qs, spec, bytes);
            ledger += batch.ledger;

            const std::string suffix = repeats == 1 ? "" : fmt::format(".r{}", r + 1);
            const auto verdicts = batch.answered();
            write_text(g.out / ("verdicts" + suffix + ".ndjson"), verdicts_to_ndjson(verdicts));
            if (!batch.failures.empty()) {
                std::vector<json> rows;
                for (const auto& f : batch.failures) {
                    rows.push_back({{"query_id", f.query_id}, {"message", f.message}});
                    err << "failed " << f.query_id << ": " << f.message << "\n";
                }
                write_text(g.out / ("failures" + suffix + ".ndjson"), to_ndjson(rows));
                exit = kProvider;
            }
            if (verdicts.empty()) continue;
            const MllmReport rep = mllm_report(verdicts);
            numeric.push_back(to_numeric(rep));
            reports.push_back(to_json(rep));
            out << fmt::format("round {}: {} verdicts, yes {:.2f}%, no {:.2f}%, refuse {:.2f}%, unparseable {:.2f}%\n",
                               r + 1, rep.total, 100 * rep.yes_rate, 100 * rep.no_rate, 100 * rep.refuse_rate,
                               100 * rep.unparseable_rate);
        }

        json summary{{"model_id", config.model_id},
                     {"prompt", to_json(spec)},
                     {"prompt_hash", prompt_hash(spec)},
                     {"prompt_fixture_version", prompt_fixture_version()},
                     {"refusal_table_version", refusal_table_version()},
                     {"rounds", reports},
                     {"cost", to_json(ledger)}};
        if (numeric.size() >= 2 && exit == kOk) {
            const auto agg = aggregate_runs(numeric);
            summary["aggregate"] = to_json(agg);
            const auto& a = agg.at("attacc_mllm");
            out << fmt::format("AttAcc_MLLM over {} rounds: {:.2f} ± {:.2f}\n", numeric.size(), 100 * a.mean,
                               100 * a.std);
        }
        write_text(g.out / "mllm_report.json", summary.dump(2) + "\n");
        out << fmt::format("cost: {} provider calls, ${:.6f}\n", ledger.provider_calls, ledger.total_cost.dollars());
        return exit;
    }
};

// ---------------------------------------------------------------------------

TableRow parse_row_argument(const std::string& arg) {
    json j;
    try {
        j = fs::exists(arg) ? json::parse(read_text_file(arg)) : json::parse(arg);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("--check-row: ") + e.what());
    }
    try {
        return parse_table_row(j);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("--check-row: ") + e.what());
    }
}

struct ScoreCmd {
    std::string setup;
    fs::path predictions;
    fs::path verdicts;
    fs::path queries;
    fs::path oracle;
    fs::path human;
    std::optional<std::string> check_row;
    double tolerance = 0.2;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("score", "Confusion-matrix rates of a setup against an oracle");
        c->add_option("--setup", setup)->required();
        c->add_option("--predictions", predictions, "E/T prediction manifest")->required();
        auto* v = c->add_option("--verdicts", verdicts, "Verdicts from judge (needs --queries)");
        c->add_option("--queries", queries, "Queries the verdicts answer");
        auto* o = c->add_option("--oracle", oracle, "Oracle label manifest");
        v->excludes(o);
        c->add_option("--human", human, "Human-majority labels overriding the oracle");
        c->add_option("--check-row", check_row, "Published row (JSON file or inline JSON) to compare against");
        c->add_option("--tolerance", tolerance, "Allowed difference in percentage points")->capture_default_str();
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        const ImageCatalog corpus = require_images(g);
        const MISetup s = require_setup(g, setup);
        const PredictionTable preds = load_predictions(predictions, &corpus);
        const auto recs = probe_pool(s, corpus, PairKind::reconstruction);
        if (recs.empty()) throw ValidationError("setup '" + setup + "' has no reconstructions");

        OracleTable labels;
        std::optional<MllmReport> mllm;
        if (!verdicts.empty()) {
            if (queries.empty()) throw ValidationError("--verdicts needs --queries");
            std::vector<EvalQuery> qs;
            for (auto& q : load_queries(queries, &corpus)) {
                if (q.setup_id == s.setup_id && q.pair_kind == PairKind::reconstruction) qs.push_back(std::move(q));
            }
            std::set<std::string> ids;
            for (const auto& q : qs) ids.insert(q.query_id);
            std::vector<Verdict> vs;
            for (auto& v : load_verdicts(verdicts)) {
                if (ids.contains(v.query_id)) vs.push_back(std::move(v));
            }
            if (vs.empty()) throw ValidationError("no verdicts for reconstruction queries of '" + setup + "'");
            mllm = mllm_report(vs);
            labels = oracle_from_verdicts(qs, vs);
        } else if (!oracle.empty()) {
            labels = load_oracle(oracle, &corpus);
        } else {
            throw ValidationError("score needs --verdicts/--queries or --oracle");
        }
        if (!human.empty()) labels = OracleTable::merged(labels, load_oracle(human, &corpus));

        const Classification cls = classify_outcomes(recs, preds, labels);
        const RateReport rates = rates_from_counts(cls.counts);
        std::size_t positives = 0;
        for (const auto& o : cls.outcomes) positives += o.oracle_positive ? 1 : 0;
        MllmReport p_report;
        p_report.attacc_mllm = static_cast<double>(positives) / static_cast<double>(recs.size());
        if (mllm && human.empty()) p_report = *mllm;
        const TableRow row = table_row_from(p_report, rates);
        const RowCheck check = check_table_row(row);

        json report{{"setup", to_json(s)},
                    {"n", recs.size()},
                    {"counts", to_json(cls.counts)},
                    {"rates", to_json(rates)},
                    {"row", to_json(row)},
                    {"check", to_json(check)}};
        if (mllm) report["mllm"] = to_json(*mllm);

        int exit = kOk;
        if (check_row) {
            const TableRow published = parse_row_argument(*check_row);
            const std::vector<std::pair<const char*, double TableRow::*>> fields{
                {"attacc_mllm", &TableRow::attacc_mllm}, {"attacc_curr", &TableRow::attacc_curr},
                {"tpr", &TableRow::tpr},                 {"fnr", &TableRow::fnr},
                {"fpr", &TableRow::fpr},                 {"tnr", &TableRow::tnr}};
            json diffs = json::object();
            bool ok = true;
            for (const auto& [name, field] : fields) {
                const double d = row.*field - published.*field;
                diffs[name] = d;
                if (!(std::abs(d) <= tolerance + 1e-9)) ok = false;
            }
            report["published"] = {{"row", to_json(published)},
                                   {"consistency", to_json(check_table_row(published, tolerance))},
                                   {"difference", diffs},
                                   {"tolerance", tolerance},
                                   {"pass", ok}};
            if (!ok) exit = kCheckFailed;
        }

        write_text(g.out / "outcomes.ndjson", outcomes_to_ndjson(cls.outcomes));
        write_text(g.out / "report.json", report.dump(2) + "\n");

        ReportRow rr{s, "", recs.size(), row, std::nullopt, check};
        out << render_report_text(std::span<const ReportRow>(&rr, 1));
        if (check_row) {
            out << (exit == kOk ? "published row: match" : "published row: MISMATCH") << fmt::format(
                                                                                            " (tolerance {} pp)\n",
                                                                                            tolerance);
        }
        return exit;
    }
};

// ---------------------------------------------------------------------------

struct RunContext {
    std::string started_at = utc_timestamp();
    std::map<std::string, fs::path> inputs;
};

void finish_run(const Globals& g, RunRecord& rec, RunContext& ctx, const std::map<std::string, std::string>& files,
                std::ostream& out) {
    rec.started_at = ctx.started_at;
    rec.prompt_fixture_version = std::string(prompt_fixture_version());
    rec.input_hashes = hash_inputs(ctx.inputs);
    rec.finished_at = utc_timestamp();
    const fs::path dir = write_run(g.out / "runs", rec, files);
    out << "run record: " << dir.string() << "\n";
}

struct SelectBenchCmd {
    std::string dataset;
    std::size_t n_pairs = 100;
    std::size_t refs = 4;
    std::uint64_t seed = 0;
    fs::path provider;
    EligibilityCriteria criteria;
    PromptOptions prompt;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("select-bench", "Positive/negative pair benchmark for an MLLM");
        c->add_option("--dataset", dataset, "Private dataset id")->required();
        c->add_option("--n-pairs", n_pairs, "Pairs per kind")->capture_default_str();
        c->add_option("--refs", refs)->capture_default_str();
        c->add_option("--seed", seed)->capture_default_str();
        c->add_option("--provider", provider, "Provider config (defaults to --config)");
        c->add_option("--min-pos-yes", criteria.min_pos_yes)->capture_default_str();
        c->add_option("--min-neg-no", criteria.min_neg_no)->capture_default_str();
        c->add_option("--max-refuse", criteria.max_refuse)->capture_default_str();
        prompt.add_to(c);
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        RunContext rc;
        const ImageCatalog corpus = require_images(g);
        const fs::path config_path = provider.empty() ? g.config : provider;
        auto ps = open_provider(load_config(config_path), config_path, nullptr);
        rc.inputs = {{"images", g.images}, {"provider_config", config_path}};

        SelectionConfig sc;
        sc.dataset_id = dataset;
        sc.domain_kind = prompt.domain ? parse_domain_kind(*prompt.domain) : DomainKind::face;
        sc.k = refs;
        sc.n_pairs = n_pairs;
        sc.seed = seed;
        sc.criteria = criteria;

        ExperimentContext ctx;
        ctx.corpus = &corpus;
        ctx.provider = ps.provider.get();
        ctx.policy = ps.config.policy;
        ctx.clock = ps.clock.get();
        ctx.prompt = prompt.spec(sc.domain_kind);
        const SelectionResult r = run_selection_bench(ctx, sc);

        json config = options_json({{"dataset", dataset},
                                    {"n_pairs", n_pairs},
                                    {"refs", refs},
                                    {"seed", seed},
                                    {"prompt", to_json(ctx.prompt)},
                                    {"provider", to_json(ps.config)},
                                    {"criteria",
                                     {{"min_pos_yes", criteria.min_pos_yes},
                                      {"min_neg_no", criteria.min_neg_no},
                                      {"max_refuse", criteria.max_refuse}}}});
        json report{{"dataset", dataset},
                    {"positive", to_json(r.positive)},
                    {"negative", to_json(r.negative)},
                    {"eligible", r.eligible},
                    {"unmet", r.unmet},
                    {"cost", to_json(r.ledger)}};

        RunRecord rec;
        rec.setup_id = "select-" + dataset;
        rec.kind = ExperimentKind::selection;
        rec.seed = seed;
        rec.model_id = ps.provider->model_id();
        rec.ledger = r.ledger;
        rec.config = config;
        out << fmt::format("positive pairs: yes {:.2f}%  no {:.2f}%  refuse {:.2f}%\n", 100 * r.positive.yes_rate,
                           100 * r.positive.no_rate, 100 * r.positive.refuse_rate);
        out << fmt::format("negative pairs: yes {:.2f}%  no {:.2f}%  refuse {:.2f}%\n", 100 * r.negative.yes_rate,
                           100 * r.negative.no_rate, 100 * r.negative.refuse_rate);
        out << (r.eligible ? "eligible\n" : "not eligible\n");
        for (const auto& u : r.unmet) out << "  " << u << "\n";
        finish_run(g, rec, rc,
                   {{"queries.ndjson", queries_to_ndjson(r.queries)},
                    {"verdicts.ndjson", verdicts_to_ndjson(r.verdicts)},
                    {"report.json", report.dump(2) + "\n"}},
                   out);
        return kOk;
    }
};

// ---------------------------------------------------------------------------

struct TransferCmd {
    std::string setup;
    fs::path predictions;
    fs::path oracle;
    std::uint64_t seed = 0;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("transfer", "False-positive rates of MI-generated vs natural negatives");
        c->add_option("--setup", setup)->required();
        c->add_option("--predictions", predictions, "E prediction manifest")->required();
        c->add_option("--oracle", oracle, "Oracle label manifest")->required();
        c->add_option("--seed", seed)->capture_default_str();
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        RunContext rc;
        const ImageCatalog corpus = require_images(g);
        const MISetup s = require_setup(g, setup);
        const PredictionTable preds = load_predictions(predictions, &corpus);
        const OracleTable labels = load_oracle(oracle, &corpus);
        rc.inputs = {{"images", g.images}, {"setups", g.setups}, {"predictions", predictions}, {"oracle", oracle}};

        const TransferResult r = run_transfer_experiment(s, corpus, preds, labels, TransferConfig{seed});

        std::vector<json> rows;
        for (const auto& id : r.mi_negative_ids) {
            const auto* rec = corpus.find(id);
            const auto* e = preds.find(id, ModelRole::eval_E);
            rows.push_back({{"group", "mi_negative"},
                            {"image_id", id},
                            {"target", to_json(*rec->identity)},
                            {"hit", e->predicted_class == *rec->identity}});
        }
        for (const auto& a : r.natural) {
            rows.push_back(
                {{"group", "natural_negative"}, {"image_id", a.image_id}, {"target", to_json(a.target)}, {"hit", a.hit}});
        }
        json report{{"setup", to_json(s)},
                    {"n", r.n},
                    {"pinned_pool", r.pinned_pool},
                    {"fp_mi_negatives",
                     {{"hits", r.fp_mi_negatives.numerator}, {"n", r.fp_mi_negatives.denominator},
                      {"rate", r.fp_rate_mi_negatives()}}},
                    {"fp_natural_negatives",
                     {{"hits", r.fp_natural_negatives.numerator}, {"n", r.fp_natural_negatives.denominator},
                      {"rate", r.fp_rate_natural_negatives()}}}};

        RunRecord rec;
        rec.setup_id = s.setup_id;
        rec.kind = ExperimentKind::transfer;
        rec.seed = seed;
        rec.config = options_json({{"setup", setup}, {"seed", seed}});
        out << fmt::format("{} / {}: E = {}\n", s.attack_name, s.d_priv, s.eval_arch);
        out << fmt::format("MI-generated negatives: {} ({}/{})\n", pct(r.fp_mi_negatives), r.fp_mi_negatives.numerator,
                           r.fp_mi_negatives.denominator);
        out << fmt::format("natural negatives:      {} ({}/{})\n", pct(r.fp_natural_negatives),
                           r.fp_natural_negatives.numerator, r.fp_natural_negatives.denominator);
        finish_run(g, rec, rc, {{"outcomes.ndjson", to_ndjson(rows)}, {"report.json", report.dump(2) + "\n"}}, out);
        return kOk;
    }
};

// ---------------------------------------------------------------------------

struct ReassessCmd {
    std::string setup;
    fs::path predictions;
    fs::path human;
    fs::path provider;
    fs::path truth;
    fs::path image_dir;
    int repeats = 1;
    std::uint64_t seed = 0;
    std::size_t refs = 4;
    bool same_seed = false;
    PromptOptions prompt;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("reassess", "Score a setup with MLLM verdicts as the oracle");
        c->add_option("--setup", setup)->required();
        c->add_option("--predictions", predictions, "E prediction manifest")->required();
        c->add_option("--human", human, "Human-majority labels overriding MLLM verdicts");
        c->add_option("--provider", provider, "Provider config (defaults to --config)");
        c->add_option("--truth", truth, "Oracle manifest the mock provider replays");
        c->add_option("--image-dir", image_dir, "Keep composites here");
        c->add_option("--repeats", repeats)->capture_default_str()->check(CLI::PositiveNumber);
        c->add_option("--seed", seed)->capture_default_str();
        c->add_option("--refs", refs)->capture_default_str();
        c->add_flag("--same-seed", same_seed, "Reuse the seed for every repeat");
        prompt.add_to(c);
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        RunContext rc;
        const ImageCatalog corpus = require_images(g);
        const MISetup s = require_setup(g, setup);
        const PredictionTable preds = load_predictions(predictions, &corpus);
        std::optional<OracleTable> human_labels;
        if (!human.empty()) human_labels = load_oracle(human, &corpus);
        std::optional<OracleTable> truth_table;
        if (!truth.empty()) truth_table = load_oracle(truth, &corpus);
        const fs::path config_path = provider.empty() ? g.config : provider;
        auto ps = open_provider(load_config(config_path), config_path, truth_table ? &*truth_table : nullptr);
        rc.inputs = {{"images", g.images},   {"setups", g.setups},         {"predictions", predictions},
                     {"human", human},       {"truth", truth},             {"provider_config", config_path}};

        ExperimentContext ctx;
        ctx.corpus = &corpus;
        ctx.provider = ps.provider.get();
        ctx.policy = ps.config.policy;
        ctx.clock = ps.clock.get();
        ctx.prompt = prompt.spec(s.domain_kind);
        ctx.image_dir = image_dir;
        ReassessmentConfig rc_config{refs, repeats, seed, !same_seed};
        const ReassessmentResult r = run_reassessment(ctx, s, preds, human_labels ? &*human_labels : nullptr, rc_config);

        std::map<std::string, std::string> files;
        for (std::size_t i = 0; i < r.runs.size(); ++i) {
            const std::string suffix = r.runs.size() == 1 ? "" : fmt::format(".r{}", i + 1);
            files["queries" + suffix + ".ndjson"] = queries_to_ndjson(r.runs[i].queries);
            files["verdicts" + suffix + ".ndjson"] = verdicts_to_ndjson(r.runs[i].verdicts);
            files["outcomes" + suffix + ".ndjson"] = outcomes_to_ndjson(r.runs[i].classification.outcomes);
        }
        const json report = reassessment_report_json(r);
        files["report.json"] = report.dump(2) + "\n";

        RunRecord rec;
        rec.setup_id = s.setup_id;
        rec.kind = ExperimentKind::reassessment;
        rec.seed = seed;
        rec.model_id = ps.provider->model_id();
        rec.ledger = r.ledger;
        rec.config = options_json({{"setup", setup},
                                   {"repeats", repeats},
                                   {"seed", seed},
                                   {"refs", refs},
                                   {"reseed_per_repeat", !same_seed},
                                   {"prompt", to_json(ctx.prompt)},
                                   {"provider", to_json(ps.config)}});
        const ReportRow row = report_row_from_json(report, "");
        out << render_report_text(std::span<const ReportRow>(&row, 1));
        out << fmt::format("cost: {} provider calls, ${:.6f}\n", r.ledger.provider_calls, r.ledger.total_cost.dollars());
        finish_run(g, rec, rc, files, out);
        return kOk;
    }
};

// ---------------------------------------------------------------------------

struct ReportCmd {
    fs::path runs;
    std::string format = "text";

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("report", "Table of all reassessment runs");
        c->add_option("--runs", runs, "Run directory (default: <out>/runs)");
        c->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}))->capture_default_str();
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        const fs::path dir = runs.empty() ? g.out / "runs" : runs;
        const auto rows = collect_report_rows(dir);
        const std::string text = render_report_text(rows);
        const std::string js = render_report_json(rows).dump(2) + "\n";
        write_text(g.out / "report.txt", text);
        write_text(g.out / "report.json", js);
        out << (format == "json" ? js : text);
        return kOk;
    }
};

// ---------------------------------------------------------------------------

volatile std::sig_atomic_t g_stop = 0;

extern "C" void on_signal(int) { g_stop = 1; }

struct AnnotateServeCmd {
    fs::path queries;
    fs::path image_dir;
    fs::path votes;
    std::string host = "127.0.0.1";
    int port = 8080;
    AgreementPolicy policy;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("annotate-serve", "Serve annotation tasks over HTTP");
        c->add_option("--queries", queries, "Queries to annotate")->required();
        c->add_option("--image-dir", image_dir, "Composite PNGs (default: images/ next to the queries)");
        c->add_option("--votes", votes, "Vote log (default: <out>/votes.ndjson)");
        c->add_option("--host", host)->capture_default_str();
        c->add_option("--port", port, "0 picks a free port")->capture_default_str();
        c->add_option("--annotators", policy.n_annotators)->capture_default_str();
        c->add_option("--min-agree", policy.min_agree)->capture_default_str();
    }

    int run(const Globals& g, std::ostream& out, std::ostream&) const {
        policy.validate();
        auto tasks = load_queries(queries);
        AnnotationStore store(std::move(tasks), votes.empty() ? g.out / "votes.ndjson" : votes, policy);
        AnnotationServer server(store, image_dir.empty() ? queries.parent_path() / "images" : image_dir);
        const int bound = server.bind(host, port);
        out << fmt::format("listening on http://{}:{}", host, bound) << std::endl;

        g_stop = 0;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::thread watcher([&] {
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        });
        server.listen();
        g_stop = 1;
        watcher.join();
        return kOk;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Model-inversion evaluation harness", "mieval"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--images", g.images, "Image manifest (ndjson)");
    app.add_option("--setups", g.setups, "MI setup manifest (ndjson)");
    app.add_option("--config", g.config, "Provider config (JSON)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();

    ComposeCmd compose;
    JudgeCmd judge;
    ScoreCmd score;
    SelectBenchCmd select;
    TransferCmd transfer;
    ReassessCmd reassess;
    ReportCmd report;
    AnnotateServeCmd serve;
    compose.add(app);
    judge.add(app);
    score.add(app);
    select.add(app);
    transfer.add(app);
    reassess.add(app);
    report.add(app);
    serve.add(app);

    std::vector<const char*> argv{"mieval"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    try {
        fs::create_directories(g.out);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "compose") return compose.run(g, out, err);
        if (name == "judge") return judge.run(g, out, err);
        if (name == "score") return score.run(g, out, err);
        if (name == "select-bench") return select.run(g, out, err);
        if (name == "transfer") return transfer.run(g, out, err);
        if (name == "reassess") return reassess.run(g, out, err);
        if (name == "report") return report.run(g, out, err);
        if (name == "annotate-serve") return serve.run(g, out, err);
        err << "unknown subcommand " << name << "\n";
        return kValidation;
    } catch (const CoverageError& e) {
        err << "error: " << e.what() << "\n";
        for (const auto& id : e.missing_predictions()) err << "  missing prediction: " << id << "\n";
        for (const auto& id : e.missing_labels()) err << "  missing oracle label: " << id << "\n";
        return kValidation;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ImageError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kConfig;
    } catch (const ProviderError& e) {
        err << "provider error: " << e.what() << "\n";
        return e.kind() == ProviderErrorKind::authentication ? kConfig : kProvider;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kCheckFailed;
    }
}

}  // namespace mieval::cli
