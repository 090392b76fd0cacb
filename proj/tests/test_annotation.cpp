#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "mieval/annotation.hpp"
#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "mieval/rng.hpp"
#include "support.hpp"

using namespace mieval;
using testsupport::TempDir;

namespace {

AnnotationVote vote(const std::string& a, const std::string& q, Vote v, const std::string& at = "t0") {
    return AnnotationVote{a, q, v, at};
}

std::vector<EvalQuery> tasks(int n) {
    std::vector<EvalQuery> out;
    for (int i = 0; i < n; ++i) {
        EvalQuery q;
        q.query_id = "q" + std::to_string(i);
        q.setup_id = "s";
        const std::string pid = "rec" + std::to_string(i);
        q.probe = ImageRecord{pid, sha256_hex(pid), IdentityLabel{"D", "c" + std::to_string(i)},
                              Provenance::mi_reconstructed, "s", ""};
        q.target = IdentityLabel{"D", "c" + std::to_string(i)};
        q.composed_hash = sha256_hex("img" + std::to_string(i));
        out.push_back(q);
    }
    return out;
}

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST_SUITE("annotation") {

TEST_CASE("policy validation") {
    CHECK_NOTHROW(AgreementPolicy{4, 3}.validate());
    CHECK_THROWS_AS(AgreementPolicy({4, 2}).validate(), ValidationError);
    CHECK_THROWS_AS(AgreementPolicy({3, 4}).validate(), ValidationError);
    CHECK_THROWS_AS(AgreementPolicy({0, 0}).validate(), ValidationError);
}

TEST_CASE("latest vote per annotator wins") {
    std::vector<AnnotationVote> v{vote("a", "q", Vote::yes, "2025-01-01T00:00:02"),
                                  vote("a", "q", Vote::no, "2025-01-01T00:00:01")};
    auto eff = effective_votes(v);
    REQUIRE(eff.size() == 1);
    CHECK(eff[0].vote == Vote::yes);
    std::reverse(v.begin(), v.end());
    CHECK(effective_votes(v) == eff);
}

TEST_CASE("agreement filter outcomes") {
    std::vector<AnnotationVote> v;
    for (auto a : {"a", "b", "c", "d"}) v.push_back(vote(a, "unanimous", Vote::no));
    for (auto a : {"a", "b", "c"}) v.push_back(vote(a, "three", Vote::yes));
    v.push_back(vote("d", "three", Vote::no));
    for (auto a : {"a", "b"}) v.push_back(vote(a, "split", Vote::yes));
    for (auto a : {"c", "d"}) v.push_back(vote(a, "split", Vote::no));
    for (auto a : {"a", "b", "c"}) v.push_back(vote(a, "short", Vote::yes));
    v.push_back(vote("d", "short", Vote::skip));
    for (auto a : {"a", "b", "c", "d", "e"}) v.push_back(vote(a, "over", Vote::yes));

    const auto r = agreement_filter(v, {});
    REQUIRE(r.retained.size() == 2);
    CHECK(r.retained[0].query_id == "three");
    CHECK(r.retained[0].label);
    CHECK(r.retained[1].query_id == "unanimous");
    CHECK_FALSE(r.retained[1].label);
    REQUIRE(r.dropped.size() == 3);
    CHECK(r.dropped[0].reason.find("over-voted") == 0);
    CHECK(r.dropped[1].reason.find("under-voted") == 0);
    CHECK(r.dropped[2].reason.find("agreement") != std::string::npos);
}

TEST_CASE("retained set is invariant under annotator relabeling and vote order") {
    Rng rng(12);
    std::vector<AnnotationVote> v;
    const std::vector<std::string> names{"a", "b", "c", "d"};
    for (int q = 0; q < 200; ++q) {
        for (const auto& a : names) {
            const auto r = rng.below(10);
            v.push_back(vote(a, "q" + std::to_string(q), r < 5 ? Vote::yes : r < 9 ? Vote::no : Vote::skip));
        }
    }
    const auto base = agreement_filter(v, {});
    for (int trial = 0; trial < 10; ++trial) {
        auto relabeled = v;
        std::vector<std::string> perm = names;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        for (auto& x : relabeled) x.annotator_id = "anon-" + perm[static_cast<std::size_t>(x.annotator_id[0] - 'a')];
        for (std::size_t i = relabeled.size(); i > 1; --i) std::swap(relabeled[i - 1], relabeled[rng.below(i)]);
        const auto r = agreement_filter(relabeled, {});
        REQUIRE(r.retained.size() == base.retained.size());
        for (std::size_t i = 0; i < r.retained.size(); ++i) {
            CHECK(r.retained[i].query_id == base.retained[i].query_id);
            CHECK(r.retained[i].label == base.retained[i].label);
        }
    }
}

TEST_CASE("export produces human-majority labels") {
    const auto qs = tasks(2);
    std::vector<AnnotationVote> v;
    for (auto a : {"a", "b", "c", "d"}) v.push_back(vote(a, "q0", Vote::yes));
    const auto labels = export_oracle(agreement_filter(v, {}), qs);
    REQUIRE(labels.size() == 1);
    const auto* l = labels.resolve("rec0", qs[0].target);
    REQUIRE(l != nullptr);
    CHECK(l->matches_target);
    CHECK(l->source == OracleSource::human_majority);
    CHECK_THROWS_AS(export_oracle(agreement_filter(v, {}), std::vector<EvalQuery>{}), ValidationError);
}

TEST_CASE("store persists votes and replays them") {
    TempDir tmp;
    const auto log = tmp / "votes.ndjson";
    {
        AnnotationStore store(tasks(3), log, {});
        CHECK(store.submit("a", "q0", Vote::yes) == SubmitStatus::recorded);
        CHECK(store.submit("a", "q0", Vote::no) == SubmitStatus::replaced);
        CHECK(store.submit("b", "q1", Vote::skip) == SubmitStatus::recorded);
        CHECK_THROWS_AS(store.submit("a", "zz", Vote::yes), ValidationError);
        CHECK(store.pending("a") == std::vector<std::string>{"q1", "q2"});
    }
    AnnotationStore again(tasks(3), log, {});
    CHECK(again.vote_of("a", "q0") == Vote::no);
    CHECK(again.vote_of("b", "q1") == Vote::skip);
    CHECK(again.effective_count("q0") == 1);
    CHECK(again.snapshot().size() == 2);
    CHECK_FALSE(again.quorum_reached());
}

TEST_CASE("store caps annotators per query") {
    TempDir tmp;
    AnnotationStore store(tasks(1), tmp / "v.ndjson", AgreementPolicy{3, 2});
    for (auto a : {"a", "b", "c"}) CHECK(store.submit(a, "q0", Vote::yes) == SubmitStatus::recorded);
    CHECK(store.submit("d", "q0", Vote::yes) == SubmitStatus::quorum_full);
    CHECK(store.submit("a", "q0", Vote::no) == SubmitStatus::replaced);
    CHECK(store.quorum_reached());
}

TEST_CASE("concurrent submissions are all persisted") {
    TempDir tmp;
    const auto log = tmp / "v.ndjson";
    {
        AnnotationStore store(tasks(50), log, {});
        std::vector<std::thread> threads;
        for (auto a : {"a", "b", "c", "d"}) {
            threads.emplace_back([&store, a] {
                for (int i = 0; i < 50; ++i) store.submit(a, "q" + std::to_string(i), i % 3 ? Vote::yes : Vote::no);
            });
        }
        for (auto& t : threads) t.join();
        CHECK(store.quorum_reached());
    }
    AnnotationStore replay(tasks(50), log, {});
    CHECK(replay.snapshot().size() == 200);
    const auto r = agreement_filter(replay.snapshot(), {});
    CHECK(r.retained.size() == 50);
}

TEST_CASE("http api") {
    TempDir tmp;
    const auto qs = tasks(3);
    std::filesystem::create_directories(tmp / "img");
    write_png(tmp / "img" / "q0.png", testsupport::synthetic_image(1, 1));
    AnnotationStore store(qs, tmp / "votes.ndjson", AgreementPolicy{2, 2});
    AnnotationServer server(store, tmp / "img");
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);

    SUBCASE("tasks and queries") {
        auto r = cli.Get("/api/tasks?annotator=alice");
        REQUIRE(r);
        CHECK(r->status == 200);
        CHECK(body_of(r).at("pending").size() == 3);
        CHECK(cli.Get("/api/tasks")->status == 400);

        r = cli.Get("/api/query/q1");
        REQUIRE(r);
        CHECK(r->status == 200);
        const auto q = body_of(r);
        CHECK(q.at("position") == 2);
        CHECK(q.at("image_url") == "/api/image/q1");
        CHECK_FALSE(q.contains("target"));
        CHECK_FALSE(q.contains("pair_kind"));
        CHECK(cli.Get("/api/query/nope")->status == 404);

        r = cli.Get("/api/image/q0");
        REQUIRE(r);
        CHECK(r->status == 200);
        CHECK(r->get_header_value("Content-Type") == "image/png");
        CHECK(decode_image(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(r->body.data()),
                                                         r->body.size())) == testsupport::synthetic_image(1, 1));
        CHECK(cli.Get("/api/image/q2")->status == 404);
    }

    SUBCASE("vote validation") {
        auto r = cli.Post("/api/votes", "{bad", "application/json");
        CHECK(r->status == 400);
        r = cli.Post("/api/votes", R"({"query_id":"q0","vote":"maybe"})", "application/json");
        CHECK(r->status == 400);
        const auto errors = body_of(r).at("errors");
        CHECK(errors.contains("annotator_id"));
        CHECK(errors.contains("vote"));
        r = cli.Post("/api/votes", R"({"annotator_id":"a","query_id":"zz","vote":"yes"})", "application/json");
        CHECK(r->status == 400);
        CHECK(body_of(r).at("errors").contains("query_id"));
    }

    SUBCASE("voting through to export") {
        CHECK(cli.Get("/api/export")->status == 409);
        for (const auto& q : qs) {
            for (auto a : {"a", "b"}) {
                const json v{{"annotator_id", a}, {"query_id", q.query_id}, {"vote", q.query_id == "q1" && a[0] == 'b' ? "no" : "yes"}};
                auto r = cli.Post("/api/votes", v.dump(), "application/json");
                REQUIRE(r);
                CHECK(r->status == 200);
                CHECK(body_of(r).at("status") == "recorded");
            }
        }
        auto r = cli.Post("/api/votes", R"({"annotator_id":"c","query_id":"q0","vote":"yes"})", "application/json");
        CHECK(r->status == 409);
        r = cli.Post("/api/votes", R"({"annotator_id":"a","query_id":"q0","vote":"yes"})", "application/json");
        CHECK(body_of(r).at("status") == "replaced");

        CHECK(body_of(cli.Get("/api/query/q1?annotator=b")).at("prior_vote") == "no");
        const auto agreement = body_of(cli.Get("/api/agreement"));
        CHECK(agreement.at("quorum_reached") == true);
        CHECK(agreement.at("retained") == 2);
        CHECK(agreement.at("dropped") == 1);

        r = cli.Get("/api/export");
        REQUIRE(r);
        CHECK(r->status == 200);
        std::vector<std::string> lines;
        std::istringstream in(r->body);
        for (std::string line; std::getline(in, line);) lines.push_back(line);
        REQUIRE(lines.size() == 2);
        const auto label = parse_oracle_label(json::parse(lines[0]));
        CHECK(label.source == OracleSource::human_majority);
        CHECK(label.image_id == "rec0");

        // the server export agrees with a direct filter over the persisted log
        std::vector<AnnotationVote> logged;
        for_each_ndjson(tmp / "votes.ndjson",
                        [&](std::size_t, const json& j) { logged.push_back(parse_annotation_vote(j)); });
        CHECK(agreement_filter(logged, AgreementPolicy{2, 2}).retained.size() == 2);
    }

    SUBCASE("cors preflight") {
        auto r = cli.Options("/api/votes");
        REQUIRE(r);
        CHECK(r->status == 204);
        CHECK(r->has_header("Access-Control-Allow-Origin"));
    }

    server.stop();
}

TEST_CASE("binding a taken port is a config error") {
    TempDir tmp;
    AnnotationStore store(tasks(1), tmp / "v.ndjson", {});
    AnnotationServer a(store, tmp.path());
    const int port = a.start("127.0.0.1", 0);
    AnnotationServer b(store, tmp.path());
    CHECK_THROWS_AS(b.bind("127.0.0.1", port), ConfigError);
    a.stop();
}

}
