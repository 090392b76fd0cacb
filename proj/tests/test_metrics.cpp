#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mieval/classifier_eval.hpp"
#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/metrics.hpp"
#include "mieval/rng.hpp"
#include "support.hpp"

using namespace mieval;

namespace {

IdentityLabel ident(int i) { return IdentityLabel{"D", std::to_string(i), std::nullopt}; }

struct Synthetic {
    std::vector<ImageRecord> recs;
    PredictionTable preds;
    OracleTable oracle;
    std::vector<PredictionEntry> t_preds;
};

Synthetic random_records(std::size_t n, std::uint64_t seed, int n_ids = 5) {
    Rng rng(seed);
    Synthetic s;
    std::vector<PredictionEntry> preds;
    std::vector<OracleLabel> labels;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "r" + std::to_string(i);
        const auto target = ident(static_cast<int>(rng.below(n_ids)));
        s.recs.push_back(ImageRecord{id, sha256_hex(id), target, Provenance::mi_reconstructed, "s", ""});
        const auto e = ident(static_cast<int>(rng.below(n_ids)));
        const auto t = ident(static_cast<int>(rng.below(n_ids)));
        preds.push_back(PredictionEntry{id, ModelRole::eval_E, e, rng.uniform()});
        preds.push_back(PredictionEntry{id, ModelRole::target_T, t, rng.uniform()});
        s.t_preds.push_back(preds.back());
        labels.push_back(OracleLabel{id, target, rng.bernoulli(0.4), OracleSource::mllm});
        if (rng.bernoulli(0.2)) labels.push_back(OracleLabel{id, target, rng.bernoulli(0.5), OracleSource::human_majority});
    }
    s.preds = PredictionTable(preds);
    s.oracle = OracleTable(labels);
    return s;
}

Verdict verdict(Answer a) {
    Verdict v;
    v.answer = a;
    return v;
}

}  // namespace

TEST_SUITE("classifier_eval") {

TEST_CASE("outcome table") {
    CHECK(outcome_of(true, true) == Outcome::TP);
    CHECK(outcome_of(false, true) == Outcome::FP);
    CHECK(outcome_of(false, false) == Outcome::TN);
    CHECK(outcome_of(true, false) == Outcome::FN);
}

TEST_CASE("predicates check roles and targets") {
    PredictionEntry e{"x", ModelRole::eval_E, ident(1), 0.9};
    PredictionEntry t{"x", ModelRole::target_T, ident(1), 0.9};
    OracleLabel no{"x", ident(1), false, OracleSource::mllm};
    CHECK(curr_success(e, ident(1)));
    CHECK_FALSE(curr_success(e, ident(2)));
    CHECK_THROWS_AS(curr_success(t, ident(1)), ValidationError);
    CHECK(is_mi_false_positive(t, no, ident(1)));
    CHECK_THROWS_AS(is_mi_false_positive(e, no, ident(1)), ValidationError);
    CHECK_THROWS_AS(is_mi_false_positive(t, OracleLabel{"x", ident(2), false}, ident(1)), ValidationError);
    CHECK(is_transferred_type1(t, e, no, ident(1)));
    auto yes = no;
    yes.matches_target = true;
    CHECK_FALSE(is_transferred_type1(t, e, yes, ident(1)));
    CHECK(type1_condition(e, no, ident(1)) == type1_condition(t, no, ident(1)));
}

TEST_CASE("transferred type-I implies MI false positive (property)") {
    const auto s = random_records(2000, 17, 3);
    std::size_t transferred = 0;
    for (std::size_t i = 0; i < s.recs.size(); ++i) {
        const auto& r = s.recs[i];
        const auto* t = s.preds.find(r.image_id, ModelRole::target_T);
        const auto* e = s.preds.find(r.image_id, ModelRole::eval_E);
        const auto* o = s.oracle.resolve(r.image_id, *r.identity);
        const bool tr = is_transferred_type1(*t, *e, *o, *r.identity);
        transferred += tr;
        if (tr) CHECK(is_mi_false_positive(*t, *o, *r.identity));
    }
    CHECK(transferred > 0);
}

TEST_CASE("classification matches a brute-force tally") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto s = random_records(1500, seed);
        const auto c = classify_outcomes(s.recs, s.preds, s.oracle);
        ConfusionCounts brute;
        for (const auto& r : s.recs) {
            const bool hit = s.preds.find(r.image_id, ModelRole::eval_E)->predicted_class == *r.identity;
            const auto* h = s.oracle.find(r.image_id, *r.identity, OracleSource::human_majority);
            const bool pos = h ? h->matches_target
                               : s.oracle.find(r.image_id, *r.identity, OracleSource::mllm)->matches_target;
            if (pos && hit) ++brute.tp;
            if (!pos && hit) ++brute.fp;
            if (!pos && !hit) ++brute.tn;
            if (pos && !hit) ++brute.fn;
        }
        CHECK(c.counts == brute);
        CHECK(c.counts.total() == s.recs.size());
        CHECK(c.outcomes == serial::classify_outcomes(s.recs, s.preds, s.oracle).outcomes);
        for (std::size_t i = 0; i < s.recs.size(); ++i) CHECK(c.outcomes[i].image_id == s.recs[i].image_id);
    }
}

TEST_CASE("coverage gaps list every missing id") {
    auto s = random_records(20, 4);
    std::vector<PredictionEntry> partial;
    for (const auto& e : s.preds.entries()) {
        if (e.image_id != "r3" && e.image_id != "r7") partial.push_back(e);
    }
    std::vector<OracleLabel> labels;
    for (const auto& l : s.oracle.labels()) {
        if (l.image_id != "r5") labels.push_back(l);
    }
    try {
        classify_outcomes(s.recs, PredictionTable(partial), OracleTable(labels));
        FAIL("expected CoverageError");
    } catch (const CoverageError& e) {
        CHECK(e.missing_predictions() == std::vector<std::string>{"r3", "r7"});
        CHECK(e.missing_labels() == std::vector<std::string>{"r5"});
    }
}

TEST_CASE("outcomes serialize one line per record") {
    const auto s = random_records(10, 5);
    const auto c = classify_outcomes(s.recs, s.preds, s.oracle);
    const auto text = outcomes_to_ndjson(c.outcomes);
    CHECK(std::count(text.begin(), text.end(), '\n') == 10);
}

}

TEST_SUITE("metrics") {

TEST_CASE("rates from counts") {
    const auto r = rates_from_counts(ConfusionCounts{30, 10, 50, 10});
    CHECK(*r.attacc_curr.value() == doctest::Approx(0.4));
    CHECK(*r.tpr.value() == doctest::Approx(0.75));
    CHECK(*r.fnr.value() == doctest::Approx(0.25));
    CHECK(*r.fpr.value() == doctest::Approx(10.0 / 60.0));
    CHECK(*r.tnr.value() == doctest::Approx(50.0 / 60.0));

    const auto none = rates_from_counts(ConfusionCounts{0, 3, 4, 0});
    CHECK_FALSE(none.tpr.value());
    CHECK_FALSE(none.fnr.value());
    CHECK(none.fpr.value());
    CHECK(to_json(none).at("tpr").is_null());
    CHECK(to_numeric(none).count("tpr") == 0);
}

TEST_CASE("complement and mixture invariants over random counts") {
    Rng rng(99);
    for (int i = 0; i < 500; ++i) {
        ConfusionCounts c{rng.below(50) + 1, rng.below(50) + 1, rng.below(50) + 1, rng.below(50) + 1};
        const auto r = rates_from_counts(c);
        CHECK(*r.tpr.value() + *r.fnr.value() == doctest::Approx(1.0));
        CHECK(*r.fpr.value() + *r.tnr.value() == doctest::Approx(1.0));
        const double p = static_cast<double>(c.tp + c.fn) / static_cast<double>(c.total());
        CHECK(mixture_attacc(p, *r.tpr.value(), *r.fpr.value()) == doctest::Approx(*r.attacc_curr.value()));
        TableRow row{100 * p, 100 * *r.attacc_curr.value(), 100 * *r.tpr.value(), 100 * *r.fnr.value(),
                     100 * *r.fpr.value(), 100 * *r.tnr.value()};
        CHECK(check_table_row(row).pass);
    }
}

TEST_CASE("mixture identity input checks") {
    CHECK_THROWS_AS(mixture_attacc(1.2, 0.5, 0.5), ValidationError);
    CHECK_THROWS_AS(mixture_attacc(0.5, -0.1, 0.5), ValidationError);
    CHECK(mixture_attacc(0.0, 0.9, 0.3) == doctest::Approx(0.3));
    CHECK(mixture_attacc(1.0, 0.9, 0.3) == doctest::Approx(0.9));
}

TEST_CASE("row check residuals") {
    TableRow row{50, 60, 80, 20, 40, 60};
    auto c = check_table_row(row);
    CHECK(c.pass);
    row.tnr = 61;
    c = check_table_row(row);
    CHECK_FALSE(c.pass);
    CHECK(c.fpr_tnr_residual == doctest::Approx(1.0));
    CHECK(check_table_row(row, 1.5).pass);
    CHECK_THROWS_AS(check_table_row(row, 0.0), ValidationError);
    // exactly at tolerance passes
    CHECK(check_table_row(TableRow{50, 60, 80, 20.2, 40, 60}).pass);
    CHECK(parse_table_row(to_json(row)).tnr == 61);
}

TEST_CASE("mllm report counts every answer kind") {
    std::vector<Verdict> v{verdict(Answer::yes), verdict(Answer::yes), verdict(Answer::no), verdict(Answer::refuse),
                           verdict(Answer::unparseable)};
    const auto r = mllm_report(v);
    CHECK(r.total == 5);
    CHECK(r.yes == 2);
    CHECK(r.attacc_mllm == doctest::Approx(0.4));
    CHECK(r.refuse_rate == doctest::Approx(0.2));
    CHECK(r.yes_rate + r.no_rate + r.refuse_rate + r.unparseable_rate == doctest::Approx(1.0));
    CHECK_THROWS_AS(mllm_report(std::vector<Verdict>{}), ValidationError);
}

TEST_CASE("aggregation uses the sample standard deviation") {
    std::vector<NumericReport> runs{{{"a", 0.2822}}, {{"a", 0.2882}}, {{"a", 0.2762}}};
    const auto agg = aggregate_runs(runs);
    CHECK(agg.at("a").mean == doctest::Approx(0.2822));
    CHECK(agg.at("a").std == doctest::Approx(0.006));
    CHECK(agg.at("a").n == 3);
    CHECK_THROWS_AS(aggregate_runs(std::vector<NumericReport>{{{"a", 1}}}), ValidationError);
    CHECK_THROWS_AS(aggregate_runs(std::vector<NumericReport>{{{"a", 1}}, {{"b", 1}}}), ValidationError);
}

TEST_CASE("aggregation matches two-pass formulas on random data") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(20);
        std::vector<NumericReport> runs;
        std::vector<double> xs;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(rng.uniform() * 100);
            runs.push_back({{"x", xs.back()}});
        }
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(n);
        double ss = 0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        const auto agg = aggregate_runs(runs);
        CHECK(agg.at("x").mean == doctest::Approx(mean));
        CHECK(agg.at("x").std == doctest::Approx(std::sqrt(ss / static_cast<double>(n - 1))));
    }
}

TEST_CASE("table row from reports") {
    MllmReport m;
    m.attacc_mllm = 0.25;
    const auto row = table_row_from(m, rates_from_counts(ConfusionCounts{0, 5, 5, 0}));
    CHECK(row.attacc_mllm == doctest::Approx(25.0));
    CHECK(std::isnan(row.tpr));
    CHECK(row.fpr == doctest::Approx(50.0));
}

}
