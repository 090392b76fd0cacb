#pragma once

// Manifest ingestion: images, predictions, oracle labels and MI setups.
// Every collection is immutable after construction and sorted by its key.

#include <compare>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mieval/io.hpp"

namespace mieval {

/// A class label. Equality is (dataset_id, class_id); display_name is cosmetic.
struct IdentityLabel {
    std::string dataset_id;
    std::string class_id;
    std::optional<std::string> display_name;

    friend bool operator==(const IdentityLabel& a, const IdentityLabel& b) {
        return a.dataset_id == b.dataset_id && a.class_id == b.class_id;
    }
    friend std::strong_ordering operator<=>(const IdentityLabel& a, const IdentityLabel& b) {
        if (auto c = a.dataset_id <=> b.dataset_id; c != 0) return c;
        return a.class_id <=> b.class_id;
    }
};

std::string to_string(const IdentityLabel& id);  // "dataset/class"

enum class Provenance { private_train, private_test, public_data, mi_reconstructed, natural_control };
enum class DomainKind { face, dog, generic };
enum class ModelRole { target_T, eval_E };
enum class OracleSource { mllm, human_majority };

std::string_view to_string(Provenance p);
std::string_view to_string(DomainKind d);
std::string_view to_string(ModelRole r);
std::string_view to_string(OracleSource s);
Provenance parse_provenance(std::string_view s);
DomainKind parse_domain_kind(std::string_view s);
ModelRole parse_model_role(std::string_view s);
OracleSource parse_oracle_source(std::string_view s);

struct ImageRecord {
    std::string image_id;
    std::string content_hash;
    std::optional<IdentityLabel> identity;
    Provenance provenance = Provenance::public_data;
    std::optional<std::string> setup_id;
    std::string uri;

    bool operator==(const ImageRecord&) const = default;
};

struct MISetup {
    std::string setup_id;
    std::string attack_name;
    std::string d_priv;
    std::string d_pub;
    std::string target_arch;
    std::string eval_arch;
    DomainKind domain_kind = DomainKind::face;

    bool operator==(const MISetup&) const = default;
};

struct PredictionEntry {
    std::string image_id;
    ModelRole model_role = ModelRole::eval_E;
    IdentityLabel predicted_class;
    double confidence = 0.0;

    bool operator==(const PredictionEntry&) const = default;
};

struct OracleLabel {
    std::string image_id;
    IdentityLabel target;
    bool matches_target = false;
    OracleSource source = OracleSource::mllm;

    bool operator==(const OracleLabel&) const = default;
};

// JSON mapping. The parse_* functions validate type invariants and throw
// ValidationError naming the offending field.
json to_json(const IdentityLabel& v);
json to_json(const ImageRecord& v);
json to_json(const MISetup& v);
json to_json(const PredictionEntry& v);
json to_json(const OracleLabel& v);
IdentityLabel parse_identity(const json& j);
ImageRecord parse_image_record(const json& j);
MISetup parse_setup(const json& j);
PredictionEntry parse_prediction(const json& j);
OracleLabel parse_oracle_label(const json& j);

class ImageCatalog {
public:
    ImageCatalog() = default;
    /// Rejects duplicate image ids and records violating invariants.
    /// Relative URIs resolve against `base_dir`.
    explicit ImageCatalog(std::vector<ImageRecord> records, std::filesystem::path base_dir = {});

    const std::vector<ImageRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const ImageRecord* find(std::string_view image_id) const;
    const ImageRecord& at(std::string_view image_id) const;
    const std::filesystem::path& base_dir() const { return base_dir_; }
    std::filesystem::path resolve_uri(const ImageRecord& record) const;

    bool operator==(const ImageCatalog& other) const { return records_ == other.records_; }

private:
    std::vector<ImageRecord> records_;
    std::filesystem::path base_dir_;
};

class PredictionTable {
public:
    PredictionTable() = default;
    /// Rejects duplicate (image_id, model_role) and confidences outside [0, 1].
    /// When `images` is given, every image_id must resolve.
    explicit PredictionTable(std::vector<PredictionEntry> entries, const ImageCatalog* images = nullptr);

    const std::vector<PredictionEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    const PredictionEntry* find(std::string_view image_id, ModelRole role) const;

    bool operator==(const PredictionTable& other) const { return entries_ == other.entries_; }

private:
    std::vector<PredictionEntry> entries_;
};

class OracleTable {
public:
    OracleTable() = default;
    /// At most one label per (image_id, target, source).
    explicit OracleTable(std::vector<OracleLabel> labels, const ImageCatalog* images = nullptr);

    const std::vector<OracleLabel>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    const OracleLabel* find(std::string_view image_id, const IdentityLabel& target, OracleSource source) const;
    /// Effective label for (image, target): human_majority wins over mllm.
    const OracleLabel* resolve(std::string_view image_id, const IdentityLabel& target) const;

    /// Labels of `overrides` replace same-key labels of `base`.
    static OracleTable merged(const OracleTable& base, const OracleTable& overrides);

    bool operator==(const OracleTable& other) const { return labels_ == other.labels_; }

private:
    std::vector<OracleLabel> labels_;
};

class SetupRegistry {
public:
    SetupRegistry() = default;
    explicit SetupRegistry(std::vector<MISetup> setups);

    const std::vector<MISetup>& setups() const { return setups_; }
    std::size_t size() const { return setups_.size(); }
    const MISetup* find(std::string_view setup_id) const;
    const MISetup& at(std::string_view setup_id) const;

    bool operator==(const SetupRegistry& other) const { return setups_ == other.setups_; }

private:
    std::vector<MISetup> setups_;
};

enum class ManifestKind { images, predictions, oracle, setups };

struct ManifestSummary {
    ManifestKind kind;
    std::size_t count = 0;
};

ImageCatalog load_images(const std::filesystem::path& path);
PredictionTable load_predictions(const std::filesystem::path& path, const ImageCatalog* images = nullptr);
OracleTable load_oracle(const std::filesystem::path& path, const ImageCatalog* images = nullptr);
SetupRegistry load_setups(const std::filesystem::path& path);

/// Validates a manifest of the given kind without keeping it.
ManifestSummary load_manifest(const std::filesystem::path& path, ManifestKind kind,
                              const ImageCatalog* images = nullptr);

// Canonical serialization: records sorted by key, keys sorted, compact JSON.
std::string to_ndjson(const ImageCatalog& c);
std::string to_ndjson(const PredictionTable& t);
std::string to_ndjson(const OracleTable& t);
std::string to_ndjson(const SetupRegistry& r);
void save_manifest(const std::filesystem::path& path, const ImageCatalog& c);
void save_manifest(const std::filesystem::path& path, const PredictionTable& t);
void save_manifest(const std::filesystem::path& path, const OracleTable& t);
void save_manifest(const std::filesystem::path& path, const SetupRegistry& r);

using RecordPredicate = std::function<bool(const ImageRecord&)>;

/// Conjunction of optional field constraints; unset fields match anything.
struct RecordFilter {
    std::optional<Provenance> provenance;
    std::optional<IdentityLabel> identity;
    std::optional<std::string> setup_id;
    std::optional<std::string> dataset_id;

    bool operator()(const ImageRecord& r) const;
};

/// Records satisfying `pred`, ordered by image_id.
std::vector<ImageRecord> filter_records(const ImageCatalog& corpus, const RecordPredicate& pred);

/// Image ids referenced by predictions or labels that are absent from `images`.
std::vector<std::string> dangling_references(const ImageCatalog& images, const PredictionTable& predictions,
                                             const OracleTable& oracle);

}  // namespace mieval
