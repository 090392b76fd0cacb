#include "mieval/composer.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <shared_mutex>

#include "mieval/error.hpp"
#include "mieval/rng.hpp"

namespace mieval {

namespace fs = std::filesystem;

std::string_view to_string(PairKind k) {
    switch (k) {
        case PairKind::reconstruction: return "reconstruction";
        case PairKind::positive_control: return "positive_control";
        case PairKind::negative_control: return "negative_control";
    }
    return "?";
}

PairKind parse_pair_kind(std::string_view s) {
    if (s == "reconstruction") return PairKind::reconstruction;
    if (s == "positive_control") return PairKind::positive_control;
    if (s == "negative_control") return PairKind::negative_control;
    throw ValidationError("unknown pair_kind '" + std::string(s) + "'");
}

void validate_query(const EvalQuery& q) {
    auto fail = [&](const std::string& msg) { throw ValidationError("query '" + q.query_id + "': " + msg); };
    if (q.references.empty()) fail("no reference images");
    for (const auto& r : q.references) {
        if (r.image_id == q.probe.image_id) fail("probe appears among its references");
        if (r.identity && !(*r.identity == q.target)) fail("reference '" + r.image_id + "' has a foreign identity");
    }
    const bool has_identity = q.probe.identity.has_value();
    switch (q.pair_kind) {
        case PairKind::reconstruction:
            if (has_identity && !(*q.probe.identity == q.target)) fail("reconstruction probe identity != target");
            break;
        case PairKind::positive_control:
            if (has_identity && !(*q.probe.identity == q.target)) fail("positive control probe identity != target");
            break;
        case PairKind::negative_control:
            if (has_identity && *q.probe.identity == q.target) fail("negative control probe shares the target identity");
            break;
    }
}

// ---------------------------------------------------------------------------

void LayoutSpec::validate() const {
    if (ref_count < 1) throw ValidationError("layout: ref_count must be >= 1");
    if (cell_px < 64) throw ValidationError("layout: cell_px must be >= 64");
    if (margin_px < 0) throw ValidationError("layout: margin_px must be >= 0");
}

std::int64_t LayoutSpec::width() const {
    const std::int64_t k = ref_count;
    return (k + 1) * cell_px + (k + 2) * static_cast<std::int64_t>(margin_px);
}

std::int64_t LayoutSpec::height() const {
    return 2 * static_cast<std::int64_t>(margin_px) + caption_px() + cell_px;
}

// ---------------------------------------------------------------------------

std::vector<ImageRecord> select_references(const IdentityLabel& target, std::span<const ImageRecord> pool,
                                           std::size_t k, std::uint64_t seed, const ImageRecord* exclude) {
    if (k == 0) throw ValidationError("select_references: k must be positive");
    std::vector<const ImageRecord*> eligible;
    for (const auto& r : pool) {
        if (!r.identity || !(*r.identity == target)) continue;
        if (exclude != nullptr && r.image_id == exclude->image_id) continue;
        eligible.push_back(&r);
    }
    std::sort(eligible.begin(), eligible.end(),
              [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });
    eligible.erase(std::unique(eligible.begin(), eligible.end(),
                               [](const ImageRecord* a, const ImageRecord* b) { return a->image_id == b->image_id; }),
                   eligible.end());
    if (eligible.size() < k) {
        throw ValidationError("insufficient reference pool for " + to_string(target) + ": need " + std::to_string(k) +
                              ", available " + std::to_string(eligible.size()));
    }
    // Partial Fisher-Yates over the id-sorted candidates.
    Rng rng(derive_seed(seed, to_string(target)));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    std::vector<ImageRecord> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(*eligible[i]);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

class MemoizingFileLoader {
public:
    MemoizingFileLoader(const ImageCatalog& catalog, bool verify) : catalog_(catalog), verify_(verify) {}

    RgbImage operator()(const ImageRecord& record) {
        {
            std::shared_lock lock(mutex_);
            if (auto it = cache_.find(record.image_id); it != cache_.end()) return it->second;
        }
        RgbImage img;
        try {
            img = decode_image(catalog_.resolve_uri(record));
        } catch (const ImageError& e) {
            throw ImageError("image '" + record.image_id + "': " + e.what());
        }
        if (verify_ && content_hash(img) != record.content_hash) {
            throw ImageError("image '" + record.image_id + "': decoded pixels do not match content_hash");
        }
        std::unique_lock lock(mutex_);
        return cache_.emplace(record.image_id, std::move(img)).first->second;
    }

private:
    ImageCatalog catalog_;
    bool verify_;
    std::shared_mutex mutex_;
    std::map<std::string, RgbImage> cache_;
};

cv::Mat as_mat(RgbImage& img) { return cv::Mat(img.height, img.width, CV_8UC3, img.pixels.data()); }

cv::Mat as_mat(const RgbImage& img) {
    return cv::Mat(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
}

constexpr std::uint8_t kBackground = 255;
constexpr std::uint8_t kPadding = 128;

// Aspect-preserving resize into a square cell, centered, padded.
void letterbox_into(const RgbImage& src, cv::Mat& canvas, int x0, int y0, int cell) {
    cv::Mat cell_roi = canvas(cv::Rect(x0, y0, cell, cell));
    cell_roi.setTo(cv::Scalar(kPadding, kPadding, kPadding));
    const double scale = std::min(static_cast<double>(cell) / src.width, static_cast<double>(cell) / src.height);
    const int w = std::clamp(static_cast<int>(std::lround(src.width * scale)), 1, cell);
    const int h = std::clamp(static_cast<int>(std::lround(src.height * scale)), 1, cell);
    cv::Mat resized;
    const int interp = scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(as_mat(src), resized, cv::Size(w, h), 0, 0, interp);
    resized.copyTo(cell_roi(cv::Rect((cell - w) / 2, (cell - h) / 2, w, h)));
}

void draw_caption(cv::Mat& canvas, const std::string& text, int x0, int region_w, int y0, int band_h) {
    if (text.empty()) return;
    const int face = cv::FONT_HERSHEY_SIMPLEX;
    int baseline = 0;
    const cv::Size unit = cv::getTextSize(text, face, 1.0, 1, &baseline);
    const double scale =
        std::min(0.7 * band_h / std::max(1, unit.height), 0.95 * region_w / std::max(1, unit.width));
    const int thickness = std::max(1, band_h / 14);
    const cv::Size sz = cv::getTextSize(text, face, scale, thickness, &baseline);
    const cv::Point origin(x0 + (region_w - sz.width) / 2, y0 + (band_h + sz.height) / 2);
    cv::putText(canvas, text, origin, face, scale, cv::Scalar(0, 0, 0), thickness, cv::LINE_8);
}

}  // namespace

ImageLoader make_file_loader(const ImageCatalog& catalog, bool verify_hash) {
    auto loader = std::make_shared<MemoizingFileLoader>(catalog, verify_hash);
    return [loader](const ImageRecord& r) { return (*loader)(r); };
}

ComposedImage compose_query_image(const ImageRecord& probe, std::span<const ImageRecord> references,
                                  const LayoutSpec& layout, const ImageLoader& load) {
    layout.validate();
    if (references.size() != static_cast<std::size_t>(layout.ref_count)) {
        throw ValidationError("compose: expected " + std::to_string(layout.ref_count) + " references, got " +
                              std::to_string(references.size()));
    }
    const std::int64_t w = layout.width();
    const std::int64_t h = layout.height();
    constexpr std::int64_t kMaxPixels = std::int64_t{1} << 28;
    if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20) || w * h > kMaxPixels) {
        throw ImageError("compose: dimension overflow (" + std::to_string(w) + "x" + std::to_string(h) + ")");
    }

    auto load_named = [&](const ImageRecord& r) {
        try {
            return load(r);
        } catch (const ImageError& e) {
            const std::string msg = e.what();
            if (msg.find(r.image_id) != std::string::npos) throw;
            throw ImageError("image '" + r.image_id + "': " + msg);
        }
    };

    ComposedImage out;
    out.image = RgbImage(static_cast<int>(w), static_cast<int>(h), kBackground);
    cv::Mat canvas = as_mat(out.image);
    const int cell = layout.cell_px;
    const int m = layout.margin_px;
    const int band = layout.caption_px();
    const int cells_y = m + band;

    draw_caption(canvas, layout.caption_a, m, cell, m, band);
    letterbox_into(load_named(probe), canvas, m, cells_y, cell);

    const int b_x0 = 2 * m + cell;
    const int b_w = layout.ref_count * cell + (layout.ref_count - 1) * m;
    draw_caption(canvas, layout.caption_b, b_x0, b_w, m, band);
    for (int i = 0; i < layout.ref_count; ++i) {
        letterbox_into(load_named(references[static_cast<std::size_t>(i)]), canvas, b_x0 + i * (cell + m), cells_y,
                       cell);
    }
    out.digest = content_hash(out.image);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<ImageRecord> probe_pool(const MISetup& setup, const ImageCatalog& corpus, PairKind mode) {
    if (mode == PairKind::reconstruction) {
        return filter_records(corpus, RecordFilter{.provenance = Provenance::mi_reconstructed,
                                                   .setup_id = setup.setup_id});
    }
    return filter_records(corpus, [&](const ImageRecord& r) {
        return (r.provenance == Provenance::private_train || r.provenance == Provenance::private_test) &&
               r.identity && r.identity->dataset_id == setup.d_priv;
    });
}

std::vector<ImageRecord> reference_pool(const MISetup& setup, const ImageCatalog& corpus) {
    return filter_records(corpus,
                          RecordFilter{.provenance = Provenance::private_train, .dataset_id = setup.d_priv});
}

std::string sanitize_id(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                        c == '_' || c == '-';
        if (!ok) c = '_';
    }
    return out;
}

namespace {

std::string_view kind_tag(PairKind k) {
    switch (k) {
        case PairKind::reconstruction: return "rec";
        case PairKind::positive_control: return "pos";
        case PairKind::negative_control: return "neg";
    }
    return "q";
}

std::string make_query_id(const MISetup& setup, PairKind kind, std::size_t index) {
    std::string idx = std::to_string(index);
    if (idx.size() < 6) idx.insert(0, 6 - idx.size(), '0');
    return sanitize_id(setup.setup_id) + "-" + std::string(kind_tag(kind)) + "-" + idx;
}

}  // namespace

QuerySet build_queries_for_probes(const MISetup& setup, const ImageCatalog& corpus,
                                  std::span<const ImageRecord> probes, PairKind mode, std::size_t k,
                                  std::uint64_t seed) {
    if (k == 0) throw ValidationError("build_query_set: k must be positive");
    if (probes.empty()) {
        throw ValidationError("empty probe pool for setup '" + setup.setup_id + "' in mode " +
                              std::string(to_string(mode)));
    }
    const auto refs = reference_pool(setup, corpus);

    std::map<IdentityLabel, std::size_t> per_identity;
    for (const auto& r : refs) ++per_identity[*r.identity];

    QuerySet out;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const ImageRecord& probe = probes[i];
        const std::uint64_t qseed = derive_seed(seed, i);
        if (!probe.identity) {
            out.skipped.push_back({probe.image_id, {}, 0, "probe has no identity"});
            continue;
        }
        IdentityLabel target = *probe.identity;
        if (mode == PairKind::negative_control) {
            std::vector<IdentityLabel> candidates;
            for (const auto& [id, count] : per_identity) {
                if (!(id == *probe.identity) && count >= k) candidates.push_back(id);
            }
            if (candidates.empty()) {
                out.skipped.push_back({probe.image_id, {}, 0, "no other identity with enough references"});
                continue;
            }
            Rng rng(derive_seed(qseed, std::uint64_t{0x6e6567}));
            target = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
        }

        const ImageRecord* exclude = mode == PairKind::positive_control ? &probe : nullptr;
        std::size_t available = per_identity.count(target) ? per_identity[target] : 0;
        if (exclude != nullptr && probe.provenance == Provenance::private_train && available > 0) --available;
        if (available < k) {
            out.skipped.push_back({probe.image_id, target, available,
                                   "identity has " + std::to_string(available) + " reference images, need " +
                                       std::to_string(k)});
            continue;
        }

        EvalQuery q;
        q.query_id = make_query_id(setup, mode, i);
        q.setup_id = setup.setup_id;
        q.probe = probe;
        q.references = select_references(target, refs, k, qseed, exclude);
        q.target = std::move(target);
        q.pair_kind = mode;
        q.seed = qseed;
        validate_query(q);
        out.queries.push_back(std::move(q));
    }
    return out;
}

QuerySet build_query_set(const MISetup& setup, const ImageCatalog& corpus, PairKind mode, std::size_t k,
                         std::uint64_t seed) {
    const auto probes = probe_pool(setup, corpus, mode);
    return build_queries_for_probes(setup, corpus, probes, mode, k, seed);
}

// ---------------------------------------------------------------------------

namespace {

void compose_one(EvalQuery& q, const LayoutSpec& layout, const ImageLoader& load, const fs::path& out_dir) {
    auto composed = compose_query_image(q.probe, q.references, layout, load);
    if (!out_dir.empty()) write_png(out_dir / (q.query_id + ".png"), composed.image);
    q.composed_hash = std::move(composed.digest);
}

}  // namespace

void compose_batch(std::span<EvalQuery> queries, const LayoutSpec& layout, const ImageLoader& load,
                   const fs::path& out_dir) {
    layout.validate();
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const auto n = static_cast<std::int64_t>(queries.size());
    std::exception_ptr first_error;
    std::int64_t first_index = n;
    std::mutex error_mutex;

#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            compose_one(queries[static_cast<std::size_t>(i)], layout, load, out_dir);
        } catch (...) {
            std::lock_guard lock(error_mutex);
            // Report the lowest failing index so the error matches the serial path.
            if (i < first_index) {
                first_index = i;
                first_error = std::current_exception();
            }
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

void serial::compose_batch(std::span<EvalQuery> queries, const LayoutSpec& layout, const ImageLoader& load,
                           const fs::path& out_dir) {
    layout.validate();
    if (!out_dir.empty()) fs::create_directories(out_dir);
    for (auto& q : queries) compose_one(q, layout, load, out_dir);
}

// ---------------------------------------------------------------------------

json to_json(const EvalQuery& q) {
    json refs = json::array();
    for (const auto& r : q.references) refs.push_back(r.image_id);
    json j{{"query_id", q.query_id},
           {"setup_id", q.setup_id},
           {"probe", q.probe.image_id},
           {"references", refs},
           {"target", to_json(q.target)},
           {"pair_kind", std::string(to_string(q.pair_kind))},
           {"seed", q.seed}};
    if (q.composed_hash) j["composed_hash"] = *q.composed_hash;
    return j;
}

EvalQuery parse_query(const json& j, const ImageCatalog* catalog) {
    auto resolve = [&](const std::string& id) {
        if (catalog != nullptr) return catalog->at(id);
        ImageRecord stub;
        stub.image_id = id;
        return stub;
    };
    EvalQuery q;
    q.query_id = j.at("query_id").get<std::string>();
    if (q.query_id.empty()) throw ValidationError("empty query_id");
    q.setup_id = j.value("setup_id", std::string{});
    q.probe = resolve(j.at("probe").get<std::string>());
    for (const auto& r : j.at("references")) q.references.push_back(resolve(r.get<std::string>()));
    q.target = parse_identity(j.at("target"));
    q.pair_kind = parse_pair_kind(j.at("pair_kind").get<std::string>());
    q.seed = j.at("seed").get<std::uint64_t>();
    if (auto it = j.find("composed_hash"); it != j.end() && !it->is_null()) {
        q.composed_hash = it->get<std::string>();
        if (!is_hex_digest(*q.composed_hash)) throw ValidationError("query '" + q.query_id + "': bad composed_hash");
    }
    validate_query(q);
    return q;
}

std::vector<EvalQuery> load_queries(const fs::path& path, const ImageCatalog* catalog) {
    std::vector<EvalQuery> out;
    std::set<std::string> seen;
    for_each_ndjson(path, [&](std::size_t, const json& row) {
        auto q = parse_query(row, catalog);
        if (!seen.insert(q.query_id).second) throw ValidationError("duplicate key query_id '" + q.query_id + "'");
        out.push_back(std::move(q));
    });
    return out;
}

std::string queries_to_ndjson(std::span<const EvalQuery> queries) {
    std::string out;
    for (const auto& q : queries) {
        out += to_json(q).dump();
        out += '\n';
    }
    return out;
}

}  // namespace mieval
