#include "ccn/encoder.hpp"
#include "ccn/model.hpp"

#include <benchmark/benchmark.h>

namespace {

struct Setup {
    ccn::Vocabulary vocab;
    ccn::RoleTable roles;
    ccn::Hyperparams hp;
    ccn::ModelParams mp;
    ccn::Dialogue dialogue;

    explicit Setup(int hidden) {
        std::vector<std::string> toks = {"<pad>", "<unk>", "<bos>", "<eos>", "<case_sep>"};
        for (int i = 0; i < 60; ++i) {
            toks.push_back("w" + std::to_string(i));
        }
        vocab = ccn::Vocabulary::from_tokens(toks);
        const int p = roles.intern("plaintiff");
        const int d = roles.intern("defendant");
        hp.d_w = hidden / 2;
        hp.d_r = 8;
        hp.hidden = hidden;
        hp.n_blocks = 2;
        hp.n_heads = 2;
        ccn::Rng rng(3);
        mp.init(hp, vocab.size(), roles.size(), rng);
        dialogue.id = "bench";
        for (int turn = 0; turn < 6; ++turn) {
            ccn::Turn t;
            t.role_id = turn % 2 == 0 ? p : d;
            for (int i = 0; i < 12; ++i) {
                t.tokens.push_back("w" + std::to_string((turn * 17 + i * 5) % 60));
            }
            dialogue.turns.push_back(std::move(t));
        }
    }
};

void bm_encode_case(benchmark::State& state) {
    Setup s(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        ccn::Tape t;
        benchmark::DoNotOptimize(
            encode_case(t, s.mp.target_enc, *s.mp.role_emb, s.dialogue, s.vocab));
    }
    state.SetItemsProcessed(state.iterations());
}

void bm_encode_backward(benchmark::State& state) {
    Setup s(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        ccn::Tape t;
        const ccn::CaseEncoding ce =
            encode_case(t, s.mp.target_enc, *s.mp.role_emb, s.dialogue, s.vocab);
        const ccn::VarId loss = t.sum(ce.ctx);
        s.mp.store.zero_grad();
        t.backward(loss);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(state.iterations());
}

BENCHMARK(bm_encode_case)->Arg(32)->Arg(64);
BENCHMARK(bm_encode_backward)->Arg(32)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
