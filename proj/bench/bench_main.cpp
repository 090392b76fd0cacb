// Serial reference vs OpenMP kernels on synthetic inputs.

#include <benchmark/benchmark.h>

#include <map>

#include <fmt/format.h>

#include "mieval/classifier_eval.hpp"
#include "mieval/composer.hpp"
#include "mieval/hash.hpp"
#include "mieval/rng.hpp"

using namespace mieval;

namespace {

struct Outcomes {
    std::vector<ImageRecord> recs;
    PredictionTable preds;
    OracleTable oracle;
};

IdentityLabel ident(int i) { return IdentityLabel{"D", fmt::format("c{:04d}", i), std::nullopt}; }

const Outcomes& outcomes(std::size_t n) {
    static std::map<std::size_t, Outcomes> memo;
    auto [it, fresh] = memo.try_emplace(n);
    if (!fresh) return it->second;
    Rng rng(n);
    std::vector<PredictionEntry> p;
    std::vector<OracleLabel> o;
    for (std::size_t k = 0; k < n; ++k) {
        const std::string id = fmt::format("r{:07d}", k);
        const auto target = ident(static_cast<int>(rng.below(100)));
        it->second.recs.push_back(ImageRecord{id, id, target, Provenance::mi_reconstructed, "s", id});
        p.push_back(PredictionEntry{id, ModelRole::eval_E, ident(static_cast<int>(rng.below(100))), 0.5});
        o.push_back(OracleLabel{id, target, rng.bernoulli(0.5), OracleSource::mllm});
    }
    it->second.preds = PredictionTable(std::move(p));
    it->second.oracle = OracleTable(std::move(o));
    return it->second;
}

template <bool Parallel>
void BM_classify(benchmark::State& state) {
    const auto& d = outcomes(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        auto c = Parallel ? classify_outcomes(d.recs, d.preds, d.oracle)
                          : serial::classify_outcomes(d.recs, d.preds, d.oracle);
        benchmark::DoNotOptimize(c.counts);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

std::vector<EvalQuery> queries(std::size_t n) {
    std::vector<EvalQuery> qs(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& q = qs[i];
        q.query_id = fmt::format("q{}", i);
        q.target = ident(0);
        q.probe = ImageRecord{fmt::format("p{}", i), "", q.target, Provenance::mi_reconstructed, "s", ""};
        for (int r = 0; r < 4; ++r) {
            q.references.push_back(
                ImageRecord{fmt::format("t{}", r), "", q.target, Provenance::private_train, std::nullopt, ""});
        }
    }
    return qs;
}

RgbImage gradient(const ImageRecord& r) {
    RgbImage img(64, 64);
    const auto h = static_cast<std::uint8_t>(fnv1a64(r.image_id));
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            auto* px = img.at(x, y);
            px[0] = static_cast<std::uint8_t>(x * 4);
            px[1] = static_cast<std::uint8_t>(y * 4);
            px[2] = h;
        }
    }
    return img;
}

template <bool Parallel>
void BM_compose(benchmark::State& state) {
    LayoutSpec layout;
    layout.cell_px = static_cast<int>(state.range(1));
    auto qs = queries(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        if (Parallel) {
            compose_batch(qs, layout, gradient);
        } else {
            serial::compose_batch(qs, layout, gradient);
        }
        benchmark::DoNotOptimize(qs.front().composed_hash);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_classify<false>)->Name("classify/serial")->Arg(10'000)->Arg(100'000);
BENCHMARK(BM_classify<true>)->Name("classify/openmp")->Arg(10'000)->Arg(100'000);
BENCHMARK(BM_compose<false>)->Name("compose/serial")->Args({64, 64})->Args({64, 224});
BENCHMARK(BM_compose<true>)->Name("compose/openmp")->Args({64, 64})->Args({64, 224});

BENCHMARK_MAIN();
