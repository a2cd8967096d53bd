#include <benchmark/benchmark.h>

#include <cmath>
#include <string>
#include <vector>

#include "tracefind/codebleu.hpp"
#include "tracefind/encoder.hpp"
#include "tracefind/retrieval.hpp"
#include "tracefind/rng.hpp"
#include "tracefind/synth_gen.hpp"

using namespace tracefind;

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    for (auto& x : v) x /= std::sqrt(norm);
    return v;
}

const Generated& synthetic() {
    static const Generated g = [] {
        GenPlan plan;
        plan.n_methods = 100;
        plan.seed = 3;
        return generate(plan);
    }();
    return g;
}

}  // namespace

static void BM_Knn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t dim = 64;
    Rng rng(1);
    std::vector<TraceEmbedding> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i].record_id = "r" + std::to_string(i);
        rows[i].vector = unit_vector(rng, dim);
    }
    const EmbeddingIndex index(std::move(rows));
    const auto query = unit_vector(rng, dim);
    for (auto _ : state) benchmark::DoNotOptimize(index.knn(query, 5));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Knn)->Arg(1000)->Arg(10000)->Arg(50000);

static void BM_Bm25Rank(benchmark::State& state) {
    const auto& corpus = synthetic().corpus;
    std::vector<Bm25Index::Document> docs;
    for (const auto& r : corpus.records) docs.push_back({r.record_id, token_strings(r, Variant::Plain)});
    const Bm25Index index(docs);
    const auto query = token_strings(corpus.records.front(), Variant::Plain);
    for (auto _ : state) benchmark::DoNotOptimize(index.rank(query, 5));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_Bm25Rank);

static void BM_CodeBleuPair(benchmark::State& state) {
    const auto& methods = synthetic().manifest.methods;
    const auto a = analyze(methods[0].source);
    const auto b = analyze(methods[1].source);
    for (auto _ : state) benchmark::DoNotOptimize(codebleu(a, b));
}
BENCHMARK(BM_CodeBleuPair);

static void BM_CodeBleuAnalyze(benchmark::State& state) {
    const auto& source = synthetic().manifest.methods[0].source;
    for (auto _ : state) benchmark::DoNotOptimize(analyze(source));
}
BENCHMARK(BM_CodeBleuAnalyze);

// One forward pass over a batch of 8 at desk width.
static void BM_Forward(benchmark::State& state) {
    const auto len = static_cast<std::size_t>(state.range(0));
    auto cfg = EncoderConfig::desk_preset(64, len);
    const auto model = EncoderModel::initialize(cfg);
    Rng rng(2);
    std::vector<EncodedTrace> batch(8);
    for (auto& t : batch) {
        t.ids.assign(len, special::kPad);
        t.attention_mask.assign(len, 1);
        t.ids[0] = special::kCls;
        for (std::size_t i = 1; i + 1 < len; ++i) t.ids[i] = static_cast<TokenId>(special::kCount + rng.below(57));
        t.ids[len - 1] = special::kSep;
    }
    for (auto _ : state) benchmark::DoNotOptimize(forward(model, batch));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
