#pragma once

// Evaluation-query construction: reference sampling, the "Image A / Image B"
// composite, and whole query sets for a setup.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mieval/corpus.hpp"
#include "mieval/image.hpp"

namespace mieval {

enum class PairKind { reconstruction, positive_control, negative_control };

std::string_view to_string(PairKind k);
PairKind parse_pair_kind(std::string_view s);

struct EvalQuery {
    std::string query_id;
    std::string setup_id;
    ImageRecord probe;
    std::vector<ImageRecord> references;
    IdentityLabel target;
    PairKind pair_kind = PairKind::reconstruction;
    std::uint64_t seed = 0;
    std::optional<std::string> composed_hash;

    bool operator==(const EvalQuery&) const = default;
};

/// Throws ValidationError when a query breaks the pairing invariants
/// (empty/foreign references, probe among references, wrong pair kind).
void validate_query(const EvalQuery& q);

struct LayoutSpec {
    int ref_count = 4;
    int cell_px = 224;
    int margin_px = 8;
    std::string caption_a = "Image A";
    std::string caption_b = "Image B";

    void validate() const;
    int caption_px() const { return std::max(16, cell_px / 8); }
    /// margins + one probe cell + ref_count reference cells.
    std::int64_t width() const;
    std::int64_t height() const;
};

/// k distinct records of `target` drawn uniformly without replacement.
/// Deterministic in (target, pool contents, k, seed); pool order is irrelevant.
std::vector<ImageRecord> select_references(const IdentityLabel& target, std::span<const ImageRecord> pool,
                                           std::size_t k, std::uint64_t seed,
                                           const ImageRecord* exclude = nullptr);

using ImageLoader = std::function<RgbImage(const ImageRecord&)>;

/// Loader decoding `catalog.resolve_uri(record)`; with `verify_hash` the decoded
/// pixels must reproduce record.content_hash. Decoded images are memoized.
ImageLoader make_file_loader(const ImageCatalog& catalog, bool verify_hash = true);

struct ComposedImage {
    RgbImage image;
    std::string digest;
};

/// Renders probe and references into one raster. Errors name the image_id of
/// an undecodable input.
ComposedImage compose_query_image(const ImageRecord& probe, std::span<const ImageRecord> references,
                                  const LayoutSpec& layout, const ImageLoader& load);

/// Replaces characters outside [A-Za-z0-9._-] with '_'.
std::string sanitize_id(std::string_view s);

struct SkipReport {
    std::string probe_id;
    IdentityLabel target;
    std::size_t available = 0;
    std::string reason;
};

struct QuerySet {
    std::vector<EvalQuery> queries;
    std::vector<SkipReport> skipped;
};

/// Probe candidates for a mode: the setup's reconstructions, or private images
/// of d_priv for the control modes.
std::vector<ImageRecord> probe_pool(const MISetup& setup, const ImageCatalog& corpus, PairKind mode);

/// Reference candidates: private_train images of d_priv.
std::vector<ImageRecord> reference_pool(const MISetup& setup, const ImageCatalog& corpus);

/// One query per probe. Query i uses seed derive_seed(seed, i); identities with
/// fewer than k references are reported in `skipped`.
QuerySet build_queries_for_probes(const MISetup& setup, const ImageCatalog& corpus,
                                  std::span<const ImageRecord> probes, PairKind mode, std::size_t k,
                                  std::uint64_t seed);

QuerySet build_query_set(const MISetup& setup, const ImageCatalog& corpus, PairKind mode, std::size_t k,
                         std::uint64_t seed);

/// Composes every query in parallel, fills composed_hash and, when `out_dir` is
/// non-empty, writes <out_dir>/<query_id>.png.
void compose_batch(std::span<EvalQuery> queries, const LayoutSpec& layout, const ImageLoader& load,
                   const std::filesystem::path& out_dir = {});

namespace serial {
/// Single-threaded reference for compose_batch.
void compose_batch(std::span<EvalQuery> queries, const LayoutSpec& layout, const ImageLoader& load,
                   const std::filesystem::path& out_dir = {});
}  // namespace serial

json to_json(const EvalQuery& q);
/// Probe and references resolve through `catalog` when given; otherwise they
/// are id-only stubs.
EvalQuery parse_query(const json& j, const ImageCatalog* catalog = nullptr);
std::vector<EvalQuery> load_queries(const std::filesystem::path& path, const ImageCatalog* catalog = nullptr);
std::string queries_to_ndjson(std::span<const EvalQuery> queries);

}  // namespace mieval
