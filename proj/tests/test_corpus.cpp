#include <doctest.h>

#include <fstream>

#include "mieval/corpus.hpp"
#include "mieval/error.hpp"
#include "mieval/hash.hpp"
#include "support.hpp"

using namespace mieval;
using testsupport::TempDir;

namespace {

std::string hash_of(const std::string& s) { return sha256_hex(s); }

ImageRecord rec(const std::string& id, Provenance p, std::optional<IdentityLabel> who = std::nullopt,
                std::optional<std::string> setup = std::nullopt) {
    return ImageRecord{id, hash_of(id), std::move(who), p, std::move(setup), "x/" + id + ".png"};
}

IdentityLabel who(const std::string& cls) { return IdentityLabel{"CelebA", cls, std::nullopt}; }

void write_lines(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("identity equality ignores display name") {
    IdentityLabel a{"CelebA", "17", std::string("Alice")};
    IdentityLabel b{"CelebA", "17", std::nullopt};
    CHECK(a == b);
    CHECK(to_string(a) == "CelebA/17");
    CHECK(IdentityLabel{"A", "2"} < IdentityLabel{"B", "1"});
}

TEST_CASE("enum spellings round trip") {
    for (auto p : {Provenance::private_train, Provenance::private_test, Provenance::public_data,
                   Provenance::mi_reconstructed, Provenance::natural_control}) {
        CHECK(parse_provenance(to_string(p)) == p);
    }
    for (auto d : {DomainKind::face, DomainKind::dog, DomainKind::generic}) CHECK(parse_domain_kind(to_string(d)) == d);
    CHECK(parse_model_role("target_T") == ModelRole::target_T);
    CHECK(parse_oracle_source("human_majority") == OracleSource::human_majority);
    CHECK_THROWS_AS(parse_provenance("scraped"), ValidationError);
}

TEST_CASE("image record json round trip") {
    const auto r = rec("rec-1", Provenance::mi_reconstructed, who("3"), "s1");
    CHECK(parse_image_record(to_json(r)) == r);
}

TEST_CASE("record invariants") {
    auto j = to_json(rec("a", Provenance::public_data));
    j["content_hash"] = "ABC";
    CHECK_THROWS_AS(parse_image_record(j), ValidationError);

    auto k = to_json(rec("b", Provenance::mi_reconstructed, who("1"), "s"));
    k.erase("setup_id");
    CHECK_THROWS_AS(parse_image_record(k), ValidationError);

    auto m = to_json(rec("c", Provenance::public_data));
    m.erase("image_id");
    CHECK_THROWS_WITH_AS(parse_image_record(m), doctest::Contains("image_id"), ValidationError);
}

TEST_CASE("catalog is sorted and rejects duplicate ids") {
    ImageCatalog c({rec("b", Provenance::public_data), rec("a", Provenance::public_data)});
    REQUIRE(c.size() == 2);
    CHECK(c.records()[0].image_id == "a");
    CHECK(c.find("b") != nullptr);
    CHECK(c.find("zz") == nullptr);
    CHECK_THROWS_AS(c.at("zz"), ValidationError);
    CHECK_THROWS_AS(ImageCatalog({rec("a", Provenance::public_data), rec("a", Provenance::public_data)}),
                    ValidationError);
}

TEST_CASE("prediction table checks keys, range and references") {
    ImageCatalog c({rec("a", Provenance::public_data)});
    PredictionEntry e{"a", ModelRole::eval_E, who("1"), 0.5};
    PredictionEntry t{"a", ModelRole::target_T, who("1"), 0.5};
    PredictionTable table({e, t}, &c);
    CHECK(table.find("a", ModelRole::eval_E)->predicted_class == who("1"));
    CHECK_THROWS_AS(PredictionTable({e, e}), ValidationError);
    auto bad = e;
    bad.confidence = 1.5;
    CHECK_THROWS_AS(PredictionTable({bad}), ValidationError);
    auto dangling = e;
    dangling.image_id = "missing";
    CHECK_THROWS_WITH_AS(PredictionTable({dangling}, &c), doctest::Contains("missing"), ValidationError);
}

TEST_CASE("oracle resolve prefers human labels") {
    OracleLabel m{"a", who("1"), true, OracleSource::mllm};
    OracleLabel h{"a", who("1"), false, OracleSource::human_majority};
    OracleTable only_mllm({m});
    CHECK(only_mllm.resolve("a", who("1"))->matches_target);
    OracleTable both({m, h});
    CHECK_FALSE(both.resolve("a", who("1"))->matches_target);
    CHECK(both.resolve("a", who("2")) == nullptr);
    CHECK_THROWS_AS(OracleTable({m, m}), ValidationError);

    auto flipped = m;
    flipped.matches_target = false;
    const auto merged = OracleTable::merged(only_mllm, OracleTable({flipped}));
    CHECK(merged.size() == 1);
    CHECK_FALSE(merged.resolve("a", who("1"))->matches_target);
}

TEST_CASE("setup registry") {
    MISetup s{"s1", "PPA", "FaceScrub", "FFHQ", "ResNet18", "InceptionV3", DomainKind::face};
    SetupRegistry r({s});
    CHECK(r.at("s1") == s);
    CHECK(parse_setup(to_json(s)) == s);
    CHECK_THROWS_AS(SetupRegistry({s, s}), ValidationError);
    auto blank = s;
    blank.attack_name = "";
    CHECK_THROWS_AS(SetupRegistry({blank}), ValidationError);
}

TEST_CASE("manifests save canonically and reload") {
    TempDir tmp;
    ImageCatalog c({rec("b", Provenance::private_train, who("2")), rec("a", Provenance::private_train, who("1"))});
    save_manifest(tmp / "images.ndjson", c);
    const auto loaded = load_images(tmp / "images.ndjson");
    CHECK(loaded == c);
    CHECK(loaded.base_dir() == tmp.path());
    CHECK(to_ndjson(loaded) == to_ndjson(c));
    CHECK(load_manifest(tmp / "images.ndjson", ManifestKind::images).count == 2);

    // record order in the file does not matter
    ImageCatalog reversed({c.records()[1], c.records()[0]});
    CHECK(to_ndjson(reversed) == to_ndjson(c));
}

TEST_CASE("malformed ndjson names the line") {
    TempDir tmp;
    write_lines(tmp / "bad.ndjson", to_json(rec("a", Provenance::public_data)).dump() + "\n{not json\n");
    CHECK_THROWS_WITH_AS(load_images(tmp / "bad.ndjson"), doctest::Contains("2"), ValidationError);
}

TEST_CASE("dangling references across manifests") {
    TempDir tmp;
    ImageCatalog c({rec("a", Provenance::public_data)});
    PredictionTable p({PredictionEntry{"ghost", ModelRole::eval_E, who("1"), 0.1}});
    OracleTable o({OracleLabel{"ghost2", who("1"), true, OracleSource::mllm}});
    const auto d = dangling_references(c, p, o);
    CHECK(d == std::vector<std::string>{"ghost", "ghost2"});

    save_manifest(tmp / "p.ndjson", p);
    CHECK_THROWS_AS(load_predictions(tmp / "p.ndjson", &c), ValidationError);
    CHECK_NOTHROW(load_predictions(tmp / "p.ndjson"));
}

TEST_CASE("record filter") {
    ImageCatalog c({rec("r1", Provenance::mi_reconstructed, who("1"), "s1"),
                    rec("r2", Provenance::mi_reconstructed, who("2"), "s2"),
                    rec("t1", Provenance::private_train, who("1")),
                    rec("p1", Provenance::public_data)});
    CHECK(filter_records(c, RecordFilter{.setup_id = "s1"}).size() == 1);
    CHECK(filter_records(c, RecordFilter{.identity = who("1")}).size() == 2);
    CHECK(filter_records(c, RecordFilter{.provenance = Provenance::mi_reconstructed}).size() == 2);
    CHECK(filter_records(c, RecordFilter{.dataset_id = "CelebA"}).size() == 3);
    CHECK(filter_records(c, RecordFilter{}).size() == 4);
}

TEST_CASE("transfer fixture manifests load cleanly") {
    const auto dir = testsupport::fixtures_dir() / "transfer";
    const auto images = load_images(dir / "images.ndjson");
    CHECK(images.size() == 2211);
    CHECK(load_predictions(dir / "predictions.ndjson", &images).size() == 3511);
    CHECK(load_oracle(dir / "oracle.ndjson", &images).size() == 1300);
    CHECK(load_setups(dir / "setups.ndjson").size() == 2);
}

}
