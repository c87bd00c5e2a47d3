#include "ccn/decoder.hpp"

#include <benchmark/benchmark.h>

namespace {

struct Setup {
    ccn::Vocabulary vocab;
    ccn::RoleTable roles;
    ccn::Hyperparams hp;
    ccn::ModelParams mp;
    ccn::Dialogue context;
    ccn::SimilarCaseSet sc;

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
        hp.n_blocks = 1;
        hp.n_heads = 2;
        ccn::Rng rng(3);
        mp.init(hp, vocab.size(), roles.size(), rng);
        auto make = [&](const std::string& id, int salt) {
            ccn::Dialogue dia;
            dia.id = id;
            for (int turn = 0; turn < 4; ++turn) {
                ccn::Turn t;
                t.role_id = turn % 2 == 0 ? p : d;
                for (int i = 0; i < 10; ++i) {
                    t.tokens.push_back("w" + std::to_string((salt + turn * 13 + i * 7) % 60));
                }
                dia.turns.push_back(std::move(t));
            }
            return dia;
        };
        context = make("ctx", 0);
        sc.target_id = context.id;
        sc.cases.emplace_back(make("sc", 29), 1.0);
    }
};

void bm_decode_step(benchmark::State& state) {
    Setup s(static_cast<int>(state.range(0)));
    const ccn::Dialogue scd = make_sc_dialogue(s.sc);
    const ccn::ExtendedVocab xv(s.vocab, s.context, &scd);
    for (auto _ : state) {
        ccn::Tape t;
        const ccn::CaseEncoding target =
            encode_case(t, s.mp.target_enc, *s.mp.role_emb, s.context, s.vocab);
        const ccn::CaseEncoding sc_enc =
            encode_case(t, s.mp.sc_enc, *s.mp.role_emb, scd, s.vocab);
        ccn::StepState st = init_decoder_state(t, s.mp, target, 8);
        for (int i = 0; i < 8; ++i) {
            benchmark::DoNotOptimize(
                decode_step(t, s.mp, xv, target, &sc_enc, ccn::Vocabulary::kBos, st));
        }
    }
    state.SetItemsProcessed(state.iterations() * 8);
}

void bm_greedy_generate(benchmark::State& state) {
    Setup s(static_cast<int>(state.range(0)));
    ccn::GenOptions opt;
    opt.max_len = 16;
    opt.beam = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate(s.mp, s.vocab, s.context, &s.sc, opt));
    }
    state.SetItemsProcessed(state.iterations());
}

void bm_beam_generate(benchmark::State& state) {
    Setup s(static_cast<int>(state.range(0)));
    ccn::GenOptions opt;
    opt.max_len = 16;
    opt.beam = 3;
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate(s.mp, s.vocab, s.context, &s.sc, opt));
    }
    state.SetItemsProcessed(state.iterations());
}

BENCHMARK(bm_decode_step)->Arg(32)->Arg(64);
BENCHMARK(bm_greedy_generate)->Arg(32)->Arg(64);
BENCHMARK(bm_beam_generate)->Arg(32)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
