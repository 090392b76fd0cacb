#pragma once

// Synthetic corpora and scratch directories shared by the test binaries.

#include <cstdint>
#include <filesystem>
#include <string>

#include "mieval/corpus.hpp"
#include "mieval/image.hpp"

namespace testsupport {

namespace fs = std::filesystem;

fs::path fixtures_dir();

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Small flat-colored image, distinct for every (identity, sample).
mieval::RgbImage synthetic_image(int identity, int sample, int size = 8);

struct SynthSpec {
    std::string dataset = "Synth";
    std::string setup_id = "synth-ppa";
    int identities = 6;
    int train_per_id = 5;
    int test_per_id = 1;
    int reconstructions_per_id = 4;
    int public_images = 12;
    int size = 8;
    double p_oracle_match = 0.5;
    double p_e_hit = 0.7;
    std::uint64_t seed = 1;
};

struct SynthCorpus {
    mieval::ImageCatalog catalog;
    mieval::MISetup setup;
    mieval::PredictionTable predictions;
    mieval::OracleTable oracle;
    fs::path images_path;
    fs::path setups_path;
    fs::path predictions_path;
    fs::path oracle_path;
};

/// Writes PNGs plus images/setups/predictions/oracle manifests under `dir`.
SynthCorpus make_synthetic_corpus(const fs::path& dir, const SynthSpec& spec = {});

mieval::IdentityLabel identity(const std::string& dataset, int i);

}  // namespace testsupport
