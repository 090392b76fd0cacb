#include "mieval/corpus.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "mieval/error.hpp"
#include "mieval/hash.hpp"

namespace mieval {

namespace fs = std::filesystem;

std::string to_string(const IdentityLabel& id) { return id.dataset_id + "/" + id.class_id; }

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::pair<std::string_view, Enum> (&table)[N], std::string_view what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    throw ValidationError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::pair<std::string_view, Enum> (&table)[N]) {
    for (const auto& [name, value] : table) {
        if (value == v) return name;
    }
    return "?";
}

constexpr std::pair<std::string_view, Provenance> kProvenance[] = {
    {"private_train", Provenance::private_train},       {"private_test", Provenance::private_test},
    {"public", Provenance::public_data},                {"mi_reconstructed", Provenance::mi_reconstructed},
    {"natural_control", Provenance::natural_control},
};
constexpr std::pair<std::string_view, DomainKind> kDomain[] = {
    {"face", DomainKind::face}, {"dog", DomainKind::dog}, {"generic", DomainKind::generic}};
constexpr std::pair<std::string_view, ModelRole> kRole[] = {{"target_T", ModelRole::target_T},
                                                            {"eval_E", ModelRole::eval_E}};
constexpr std::pair<std::string_view, OracleSource> kSource[] = {{"mllm", OracleSource::mllm},
                                                                 {"human_majority", OracleSource::human_majority}};

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw ValidationError(std::string("missing field '") + name + "'");
    return *it;
}

std::string string_field(const json& j, const char* name, bool allow_empty = false) {
    const json& v = field(j, name);
    if (!v.is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
    auto s = v.get<std::string>();
    if (!allow_empty && s.empty()) throw ValidationError(std::string("field '") + name + "' must be non-empty");
    return s;
}

std::optional<std::string> optional_string(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

std::string_view to_string(Provenance p) { return enum_name(p, kProvenance); }
std::string_view to_string(DomainKind d) { return enum_name(d, kDomain); }
std::string_view to_string(ModelRole r) { return enum_name(r, kRole); }
std::string_view to_string(OracleSource s) { return enum_name(s, kSource); }
Provenance parse_provenance(std::string_view s) { return parse_enum(s, kProvenance, "provenance"); }
DomainKind parse_domain_kind(std::string_view s) { return parse_enum(s, kDomain, "domain_kind"); }
ModelRole parse_model_role(std::string_view s) { return parse_enum(s, kRole, "model_role"); }
OracleSource parse_oracle_source(std::string_view s) { return parse_enum(s, kSource, "oracle source"); }

json to_json(const IdentityLabel& v) {
    json j{{"dataset_id", v.dataset_id}, {"class_id", v.class_id}};
    if (v.display_name) j["display_name"] = *v.display_name;
    return j;
}

json to_json(const ImageRecord& v) {
    json j{{"image_id", v.image_id},
           {"uri", v.uri},
           {"content_hash", v.content_hash},
           {"provenance", std::string(to_string(v.provenance))}};
    if (v.identity) j["identity"] = to_json(*v.identity);
    if (v.setup_id) j["setup_id"] = *v.setup_id;
    return j;
}

json to_json(const MISetup& v) {
    return json{{"setup_id", v.setup_id},       {"attack_name", v.attack_name}, {"d_priv", v.d_priv},
                {"d_pub", v.d_pub},             {"target_arch", v.target_arch}, {"eval_arch", v.eval_arch},
                {"domain_kind", std::string(to_string(v.domain_kind))}};
}

json to_json(const PredictionEntry& v) {
    return json{{"image_id", v.image_id},
                {"model_role", std::string(to_string(v.model_role))},
                {"predicted_class", to_json(v.predicted_class)},
                {"confidence", v.confidence}};
}

json to_json(const OracleLabel& v) {
    return json{{"image_id", v.image_id},
                {"target", to_json(v.target)},
                {"matches_target", v.matches_target},
                {"source", std::string(to_string(v.source))}};
}

IdentityLabel parse_identity(const json& j) {
    if (!j.is_object()) throw ValidationError("identity must be an object");
    IdentityLabel id;
    id.dataset_id = string_field(j, "dataset_id");
    id.class_id = string_field(j, "class_id");
    id.display_name = optional_string(j, "display_name");
    return id;
}

ImageRecord parse_image_record(const json& j) {
    ImageRecord r;
    r.image_id = string_field(j, "image_id");
    r.uri = string_field(j, "uri");
    r.content_hash = string_field(j, "content_hash");
    if (!is_hex_digest(r.content_hash)) {
        throw ValidationError("image '" + r.image_id + "': content_hash must be 64 lower-case hex chars");
    }
    r.provenance = parse_provenance(string_field(j, "provenance"));
    if (auto it = j.find("identity"); it != j.end() && !it->is_null()) r.identity = parse_identity(*it);
    r.setup_id = optional_string(j, "setup_id");
    if (r.provenance == Provenance::mi_reconstructed && (!r.identity || !r.setup_id)) {
        throw ValidationError("image '" + r.image_id + "': mi_reconstructed records need identity and setup_id");
    }
    return r;
}

MISetup parse_setup(const json& j) {
    MISetup s;
    s.setup_id = string_field(j, "setup_id");
    s.attack_name = string_field(j, "attack_name");
    s.d_priv = string_field(j, "d_priv");
    s.d_pub = string_field(j, "d_pub");
    s.target_arch = string_field(j, "target_arch");
    s.eval_arch = string_field(j, "eval_arch");
    s.domain_kind = parse_domain_kind(string_field(j, "domain_kind"));
    return s;
}

PredictionEntry parse_prediction(const json& j) {
    PredictionEntry e;
    e.image_id = string_field(j, "image_id");
    e.model_role = parse_model_role(string_field(j, "model_role"));
    e.predicted_class = parse_identity(field(j, "predicted_class"));
    const json& c = field(j, "confidence");
    if (!c.is_number()) throw ValidationError("field 'confidence' must be a number");
    e.confidence = c.get<double>();
    if (!(e.confidence >= 0.0 && e.confidence <= 1.0)) {
        throw ValidationError("prediction for '" + e.image_id + "': confidence outside [0,1]");
    }
    return e;
}

OracleLabel parse_oracle_label(const json& j) {
    OracleLabel l;
    l.image_id = string_field(j, "image_id");
    l.target = parse_identity(field(j, "target"));
    const json& m = field(j, "matches_target");
    if (!m.is_boolean()) throw ValidationError("field 'matches_target' must be a boolean");
    l.matches_target = m.get<bool>();
    l.source = parse_oracle_source(string_field(j, "source"));
    return l;
}

// ---------------------------------------------------------------------------

ImageCatalog::ImageCatalog(std::vector<ImageRecord> records, fs::path base_dir)
    : records_(std::move(records)), base_dir_(std::move(base_dir)) {
    std::sort(records_.begin(), records_.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });
    for (std::size_t i = 1; i < records_.size(); ++i) {
        if (records_[i].image_id == records_[i - 1].image_id) {
            throw ValidationError("duplicate image_id '" + records_[i].image_id + "'");
        }
    }
    for (const auto& r : records_) {
        if (r.image_id.empty()) throw ValidationError("empty image_id");
        if (!is_hex_digest(r.content_hash)) throw ValidationError("image '" + r.image_id + "': bad content_hash");
        if (r.provenance == Provenance::mi_reconstructed && (!r.identity || !r.setup_id)) {
            throw ValidationError("image '" + r.image_id + "': mi_reconstructed records need identity and setup_id");
        }
    }
}

const ImageRecord* ImageCatalog::find(std::string_view image_id) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), image_id,
                               [](const ImageRecord& r, std::string_view id) { return r.image_id < id; });
    return (it != records_.end() && it->image_id == image_id) ? &*it : nullptr;
}

const ImageRecord& ImageCatalog::at(std::string_view image_id) const {
    if (const auto* r = find(image_id)) return *r;
    throw ValidationError("unknown image_id '" + std::string(image_id) + "'");
}

fs::path ImageCatalog::resolve_uri(const ImageRecord& record) const {
    fs::path p(record.uri);
    if (p.is_absolute() || base_dir_.empty()) return p;
    return base_dir_ / p;
}

namespace {

auto prediction_key(const PredictionEntry& e) { return std::tie(e.image_id, e.model_role); }

auto oracle_key(const OracleLabel& l) {
    return std::make_tuple(std::cref(l.image_id), std::cref(l.target.dataset_id), std::cref(l.target.class_id),
                           l.source);
}

}  // namespace

PredictionTable::PredictionTable(std::vector<PredictionEntry> entries, const ImageCatalog* images)
    : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const auto& a, const auto& b) { return prediction_key(a) < prediction_key(b); });
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (i > 0 && prediction_key(entries_[i - 1]) == prediction_key(e)) {
            throw ValidationError("duplicate prediction for ('" + e.image_id + "', " +
                                  std::string(to_string(e.model_role)) + ")");
        }
        if (!(e.confidence >= 0.0 && e.confidence <= 1.0)) {
            throw ValidationError("prediction for '" + e.image_id + "': confidence outside [0,1]");
        }
        if (images != nullptr && images->find(e.image_id) == nullptr) {
            throw ValidationError("dangling reference: prediction for unknown image_id '" + e.image_id + "'");
        }
    }
}

const PredictionEntry* PredictionTable::find(std::string_view image_id, ModelRole role) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), std::make_pair(image_id, role),
                               [](const PredictionEntry& e, const std::pair<std::string_view, ModelRole>& k) {
                                   return std::make_pair(std::string_view(e.image_id), e.model_role) < k;
                               });
    return (it != entries_.end() && it->image_id == image_id && it->model_role == role) ? &*it : nullptr;
}

OracleTable::OracleTable(std::vector<OracleLabel> labels, const ImageCatalog* images) : labels_(std::move(labels)) {
    std::sort(labels_.begin(), labels_.end(),
              [](const auto& a, const auto& b) { return oracle_key(a) < oracle_key(b); });
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const auto& l = labels_[i];
        if (i > 0 && oracle_key(labels_[i - 1]) == oracle_key(l)) {
            throw ValidationError("duplicate oracle label for ('" + l.image_id + "', " + to_string(l.target) + ", " +
                                  std::string(to_string(l.source)) + ")");
        }
        if (images != nullptr && images->find(l.image_id) == nullptr) {
            throw ValidationError("dangling reference: oracle label for unknown image_id '" + l.image_id + "'");
        }
    }
}

const OracleLabel* OracleTable::find(std::string_view image_id, const IdentityLabel& target,
                                     OracleSource source) const {
    auto it = std::lower_bound(labels_.begin(), labels_.end(), 0, [&](const OracleLabel& l, int) {
        return std::make_tuple(std::string_view(l.image_id), std::string_view(l.target.dataset_id),
                               std::string_view(l.target.class_id), l.source) <
               std::make_tuple(image_id, std::string_view(target.dataset_id), std::string_view(target.class_id),
                               source);
    });
    if (it != labels_.end() && it->image_id == image_id && it->target == target && it->source == source) return &*it;
    return nullptr;
}

const OracleLabel* OracleTable::resolve(std::string_view image_id, const IdentityLabel& target) const {
    if (const auto* human = find(image_id, target, OracleSource::human_majority)) return human;
    return find(image_id, target, OracleSource::mllm);
}

OracleTable OracleTable::merged(const OracleTable& base, const OracleTable& overrides) {
    std::vector<OracleLabel> out = overrides.labels();
    for (const auto& l : base.labels()) {
        if (overrides.find(l.image_id, l.target, l.source) == nullptr) out.push_back(l);
    }
    return OracleTable(std::move(out));
}

SetupRegistry::SetupRegistry(std::vector<MISetup> setups) : setups_(std::move(setups)) {
    std::sort(setups_.begin(), setups_.end(), [](const auto& a, const auto& b) { return a.setup_id < b.setup_id; });
    for (std::size_t i = 0; i < setups_.size(); ++i) {
        const auto& s = setups_[i];
        if (i > 0 && setups_[i - 1].setup_id == s.setup_id) {
            throw ValidationError("duplicate setup_id '" + s.setup_id + "'");
        }
        for (const auto* name : {&s.setup_id, &s.attack_name, &s.d_priv, &s.d_pub, &s.target_arch, &s.eval_arch}) {
            if (name->empty()) throw ValidationError("setup '" + s.setup_id + "' has an empty name field");
        }
    }
}

const MISetup* SetupRegistry::find(std::string_view setup_id) const {
    auto it = std::lower_bound(setups_.begin(), setups_.end(), setup_id,
                               [](const MISetup& s, std::string_view id) { return s.setup_id < id; });
    return (it != setups_.end() && it->setup_id == setup_id) ? &*it : nullptr;
}

const MISetup& SetupRegistry::at(std::string_view setup_id) const {
    if (const auto* s = find(setup_id)) return *s;
    throw ValidationError("unknown setup_id '" + std::string(setup_id) + "'");
}

// ---------------------------------------------------------------------------

namespace {

// Duplicate detection happens while reading so the error carries a line number.
template <typename Key>
void reject_duplicate(std::set<Key>& seen, Key key, const std::string& description) {
    if (!seen.insert(std::move(key)).second) throw ValidationError("duplicate key " + description);
}

}  // namespace

ImageCatalog load_images(const fs::path& path) {
    std::vector<ImageRecord> records;
    std::set<std::string> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto r = parse_image_record(row);
        reject_duplicate(seen, r.image_id, "image_id '" + r.image_id + "'");
        records.push_back(std::move(r));
    });
    return ImageCatalog(std::move(records), path.parent_path());
}

PredictionTable load_predictions(const fs::path& path, const ImageCatalog* images) {
    std::vector<PredictionEntry> entries;
    std::set<std::pair<std::string, ModelRole>> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto e = parse_prediction(row);
        reject_duplicate(seen, std::make_pair(e.image_id, e.model_role),
                         "('" + e.image_id + "', " + std::string(to_string(e.model_role)) + ")");
        if (images != nullptr && images->find(e.image_id) == nullptr) {
            throw ValidationError("dangling reference: prediction for unknown image_id '" + e.image_id + "'");
        }
        entries.push_back(std::move(e));
    });
    return PredictionTable(std::move(entries), images);
}

OracleTable load_oracle(const fs::path& path, const ImageCatalog* images) {
    std::vector<OracleLabel> labels;
    std::set<std::tuple<std::string, std::string, std::string, OracleSource>> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto l = parse_oracle_label(row);
        reject_duplicate(seen, std::make_tuple(l.image_id, l.target.dataset_id, l.target.class_id, l.source),
                         "('" + l.image_id + "', " + to_string(l.target) + ")");
        if (images != nullptr && images->find(l.image_id) == nullptr) {
            throw ValidationError("dangling reference: oracle label for unknown image_id '" + l.image_id + "'");
        }
        labels.push_back(std::move(l));
    });
    return OracleTable(std::move(labels), images);
}

SetupRegistry load_setups(const fs::path& path) {
    std::vector<MISetup> setups;
    std::set<std::string> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto s = parse_setup(row);
        reject_duplicate(seen, s.setup_id, "setup_id '" + s.setup_id + "'");
        setups.push_back(std::move(s));
    });
    return SetupRegistry(std::move(setups));
}

ManifestSummary load_manifest(const fs::path& path, ManifestKind kind, const ImageCatalog* images) {
    switch (kind) {
        case ManifestKind::images: return {kind, load_images(path).size()};
        case ManifestKind::predictions: return {kind, load_predictions(path, images).size()};
        case ManifestKind::oracle: return {kind, load_oracle(path, images).size()};
        case ManifestKind::setups: return {kind, load_setups(path).size()};
    }
    return {kind, 0};
}

namespace {

template <typename Range>
std::string rows_to_ndjson(const Range& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

}  // namespace

std::string to_ndjson(const ImageCatalog& c) { return rows_to_ndjson(c.records()); }
std::string to_ndjson(const PredictionTable& t) { return rows_to_ndjson(t.entries()); }
std::string to_ndjson(const OracleTable& t) { return rows_to_ndjson(t.labels()); }
std::string to_ndjson(const SetupRegistry& r) { return rows_to_ndjson(r.setups()); }
void save_manifest(const fs::path& path, const ImageCatalog& c) { write_file_atomic(path, to_ndjson(c)); }
void save_manifest(const fs::path& path, const PredictionTable& t) { write_file_atomic(path, to_ndjson(t)); }
void save_manifest(const fs::path& path, const OracleTable& t) { write_file_atomic(path, to_ndjson(t)); }
void save_manifest(const fs::path& path, const SetupRegistry& r) { write_file_atomic(path, to_ndjson(r)); }

bool RecordFilter::operator()(const ImageRecord& r) const {
    if (provenance && r.provenance != *provenance) return false;
    if (identity && (!r.identity || !(*r.identity == *identity))) return false;
    if (setup_id && r.setup_id != setup_id) return false;
    if (dataset_id && (!r.identity || r.identity->dataset_id != *dataset_id)) return false;
    return true;
}

std::vector<ImageRecord> filter_records(const ImageCatalog& corpus, const RecordPredicate& pred) {
    std::vector<ImageRecord> out;
    for (const auto& r : corpus.records()) {
        if (pred(r)) out.push_back(r);
    }
    return out;
}

std::vector<std::string> dangling_references(const ImageCatalog& images, const PredictionTable& predictions,
                                             const OracleTable& oracle) {
    std::set<std::string> missing;
    for (const auto& e : predictions.entries()) {
        if (images.find(e.image_id) == nullptr) missing.insert(e.image_id);
    }
    for (const auto& l : oracle.labels()) {
        if (images.find(l.image_id) == nullptr) missing.insert(l.image_id);
    }
    return {missing.begin(), missing.end()};
}

}  // namespace mieval
