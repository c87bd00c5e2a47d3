#include "ccn/corpus.hpp"
#include "ccn/retrieval.hpp"

#include <benchmark/benchmark.h>

namespace {

std::vector<ccn::Dialogue> corpus(int n_patterns) {
    ccn::RoleTable roles;
    ccn::SynthConfig cfg;
    cfg.n_patterns = n_patterns;
    cfg.cases_per_pattern = 40;
    cfg.entity_pool_size = n_patterns * 40 * ccn::kEntitiesPerCase;
    cfg.seed = 1;
    return generate_synthetic_corpus(cfg, roles);
}

void bm_index_build(benchmark::State& state) {
    const auto ds = corpus(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ccn::CaseIndex::build(ds));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(ds.size()));
}

void bm_candidates(benchmark::State& state) {
    const auto ds = corpus(static_cast<int>(state.range(0)));
    const auto idx = ccn::CaseIndex::build(ds);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(retrieve_candidates(idx, ds[i++ % ds.size()], 50));
    }
    state.SetItemsProcessed(state.iterations());
}

void bm_top_k(benchmark::State& state) {
    const auto ds = corpus(static_cast<int>(state.range(0)));
    const auto idx = ccn::CaseIndex::build(ds);
    const ccn::TfIdfCosineScorer scorer(idx);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(top_k_similar(idx, ds[i++ % ds.size()], 3, scorer));
    }
    state.SetItemsProcessed(state.iterations());
}

BENCHMARK(bm_index_build)->Arg(5)->Arg(20);
BENCHMARK(bm_candidates)->Arg(5)->Arg(20);
BENCHMARK(bm_top_k)->Arg(5)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
