#include "support.hpp"

#include <atomic>
#include <unistd.h>

#include <fmt/format.h>

#include "mieval/rng.hpp"

namespace testsupport {

using namespace mieval;

fs::path fixtures_dir() { return MIEVAL_FIXTURES_DIR; }

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() / fmt::format("mieval-test-{}-{}", ::getpid(), counter++);
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

RgbImage synthetic_image(int identity, int sample, int size) {
    RgbImage img(size, size);
    Rng rng(derive_seed(static_cast<std::uint64_t>(identity) * 7919u + 13u, static_cast<std::uint64_t>(sample)));
    const auto base = static_cast<std::uint8_t>(identity * 37 % 256);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            auto* px = img.at(x, y);
            px[0] = base;
            px[1] = static_cast<std::uint8_t>(rng.below(256));
            px[2] = static_cast<std::uint8_t>((x + y + sample) * 11 % 256);
        }
    }
    return img;
}

IdentityLabel identity(const std::string& dataset, int i) {
    return IdentityLabel{dataset, fmt::format("id{:03d}", i), std::nullopt};
}

SynthCorpus make_synthetic_corpus(const fs::path& dir, const SynthSpec& spec) {
    fs::create_directories(dir / "img");
    Rng rng(spec.seed);
    std::vector<ImageRecord> records;
    std::vector<PredictionEntry> preds;
    std::vector<OracleLabel> labels;
    int sample = 0;

    auto add = [&](const std::string& id, int ident, std::optional<IdentityLabel> label, Provenance prov,
                   std::optional<std::string> setup) {
        const auto img = synthetic_image(ident, sample++, spec.size);
        const std::string uri = "img/" + id + ".png";
        write_png(dir / uri, img);
        records.push_back(ImageRecord{id, content_hash(img), std::move(label), prov, std::move(setup), uri});
    };

    for (int i = 0; i < spec.identities; ++i) {
        const auto who = identity(spec.dataset, i);
        for (int s = 0; s < spec.train_per_id; ++s) {
            add(fmt::format("train-{:03d}-{}", i, s), i, who, Provenance::private_train, std::nullopt);
        }
        for (int s = 0; s < spec.test_per_id; ++s) {
            add(fmt::format("test-{:03d}-{}", i, s), i, who, Provenance::private_test, std::nullopt);
        }
        for (int s = 0; s < spec.reconstructions_per_id; ++s) {
            const std::string id = fmt::format("rec-{:03d}-{}", i, s);
            add(id, i + 1000, who, Provenance::mi_reconstructed, spec.setup_id);
            preds.push_back(PredictionEntry{id, ModelRole::target_T, who, 0.95});
            auto e_class = who;
            if (!rng.bernoulli(spec.p_e_hit)) {
                e_class = identity(spec.dataset, (i + 1 + static_cast<int>(rng.below(spec.identities - 1))) %
                                                     spec.identities);
            }
            preds.push_back(PredictionEntry{id, ModelRole::eval_E, e_class, 0.5});
            labels.push_back(OracleLabel{id, who, rng.bernoulli(spec.p_oracle_match), OracleSource::mllm});
        }
    }
    for (int s = 0; s < spec.public_images; ++s) {
        add(fmt::format("pub-{:03d}", s), 5000 + s, std::nullopt, Provenance::public_data, std::nullopt);
    }

    SynthCorpus c;
    c.catalog = ImageCatalog(records, dir);
    c.setup = MISetup{spec.setup_id, "PPA", spec.dataset, "FFHQ", "ResNet18", "InceptionV3", DomainKind::face};
    c.predictions = PredictionTable(preds, &c.catalog);
    c.oracle = OracleTable(labels, &c.catalog);
    c.images_path = dir / "images.ndjson";
    c.setups_path = dir / "setups.ndjson";
    c.predictions_path = dir / "predictions.ndjson";
    c.oracle_path = dir / "oracle.ndjson";
    save_manifest(c.images_path, c.catalog);
    save_manifest(c.setups_path, SetupRegistry({c.setup}));
    save_manifest(c.predictions_path, c.predictions);
    save_manifest(c.oracle_path, c.oracle);
    return c;
}

}  // namespace testsupport
