#pragma once

#include "ccn/config.hpp"
#include "ccn/corpus.hpp"
#include "ccn/nn.hpp"

#include <string>
#include <vector>

namespace ccn {

// One hierarchical encoder: word+role embedding, utterance-level and
// dialogue-level bidirectional recurrences, the two attention scorers and
// the transformer stack. The model owns two unshared instances (target
// case, similar cases); only the role table is shared between them.
struct EncoderParams {
    Parameter* word_emb = nullptr;  // (V x d_w)
    BiLstm utt;                     // (l x d_w+d_r) -> (l x H)
    BiLstm dia;                     // (L x H) -> (L x H)
    AttnParams attn_word;
    AttnParams attn_utt;
    std::vector<TransformerBlock> blocks;

    void init(ParamStore& ps, const std::string& prefix, const Hyperparams& hp, int vocab_size,
              Rng& rng);
};

struct DecoderParams {
    LstmCell cell;  // input: previous-token word embedding (d_w)
    Dense mix;      // (H x 2H) over [C_t; s_t]
    Dense out;      // (V x H) producing base-vocabulary logits
    // vertical gate σ(a_h·h_t + a_c·C_t + a_s·s_t + a_b)
    Parameter* a_h = nullptr;
    Parameter* a_c = nullptr;
    Parameter* a_s = nullptr;
    Parameter* a_b = nullptr;
    // horizontal gate, same shape over the similar-case summaries
    Parameter* b_h = nullptr;
    Parameter* b_c = nullptr;
    Parameter* b_s = nullptr;
    Parameter* b_b = nullptr;

    void init(ParamStore& ps, const std::string& prefix, const Hyperparams& hp, int vocab_size,
              Rng& rng);
};

// Every learnable tensor, registered in a fixed order so checkpoints and
// seeded initialization are reproducible.
struct ModelParams {
    ParamStore store;
    Parameter* role_emb = nullptr;  // (R x d_r)
    EncoderParams target_enc;
    EncoderParams sc_enc;
    DecoderParams dec;
    int vocab_size = 0;
    int n_roles = 0;

    ModelParams() = default;
    ModelParams(const ModelParams&) = delete;
    ModelParams& operator=(const ModelParams&) = delete;
    ModelParams(ModelParams&&) = default;
    ModelParams& operator=(ModelParams&&) = default;

    void init(const Hyperparams& hp, int vocab, int roles, Rng& rng);
};

// Little-endian binary checkpoint: "CCNPARAM" magic, version, then every
// tensor (name, rows, cols, doubles) in registration order. Loading demands
// the exact same names and shapes in the exact same order.
void save_checkpoint(const ParamStore& store, const std::string& path);
void load_checkpoint(ParamStore& store, const std::string& path);

// A trained model on disk is a directory: config.cfg, vocab.json,
// roles.json, params.ckpt.
struct Model {
    Hyperparams hp;
    Vocabulary vocab;
    RoleTable roles;
    ModelParams params;
};

void save_model_dir(const std::string& dir, const Hyperparams& hp, const Vocabulary& vocab,
                    const RoleTable& roles, const ParamStore& store);
Model load_model_dir(const std::string& dir);

}  // namespace ccn
