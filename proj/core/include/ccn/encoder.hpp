#pragma once

#include "ccn/corpus.hpp"
#include "ccn/model.hpp"
#include "ccn/retrieval.hpp"

#include <string>
#include <vector>

namespace ccn {

struct EncodeOptions {
    double dropout = 0.0;  // drop rate; 0 in inference mode
    Rng* rng = nullptr;    // required when dropout > 0
};

// Tape-resident encoding of one case. Positions are all tokens of the case
// flattened utterance by utterance; `bounds` marks utterance boundaries
// (bounds[i]..bounds[i+1] is utterance i, with a leading 0).
struct CaseEncoding {
    VarId h_flat = -1;    // (P x H) token-level hiddens
    VarId h_flat_T = -1;  // (H x P)
    VarId word_base = -1;  // (P x H) static part of the word-attention scores
    VarId h_dia = -1;     // (L x H) dialogue-layer hiddens
    VarId h_dia_T = -1;   // (H x L)
    VarId utt_base = -1;  // (L x H) static part of the utterance-attention scores
    VarId ctx = -1;       // (L x H) transformer outputs
    VarId ctx_T = -1;     // (H x L)
    // Static (decoder-independent) attentions:
    VarId a_word = -1;   // (P x 1), one simplex per utterance segment
    VarId a_utt = -1;    // (L x 1)
    VarId a_joint = -1;  // (P x 1), a_utt[utt_of_pos[p]] * a_word[p]
    VarId h_last = -1;   // (H x 1) final dialogue-layer hidden
    int n_pos = 0;
    int n_utt = 0;
    std::vector<int> bounds;            // length L+1
    std::vector<int> utt_of_pos;        // length P
    std::vector<std::string> pos_token;  // length P
};

// Attention recomputed for one decoder step, conditioned on s_t.
struct StepAttention {
    VarId a_joint = -1;  // (P x 1)
    VarId h_t = -1;      // (H x 1) attention-weighted token summary
    VarId c_t = -1;      // (H x 1) attention-weighted transformer summary
};

// Rows = tokens of the turn, columns = word embedding ++ role embedding.
VarId embed_turn(Tape& t, const EncoderParams& enc, Parameter& role_emb, const Turn& turn,
                 const Vocabulary& vocab);

CaseEncoding encode_case(Tape& t, const EncoderParams& enc, Parameter& role_emb,
                         const Dialogue& d, const Vocabulary& vocab,
                         const EncodeOptions& opt = {});

// The k similar cases joined into one pseudo-dialogue, a separator
// pseudo-utterance between consecutive cases.
Dialogue make_sc_dialogue(const SimilarCaseSet& sc);

CaseEncoding encode_similar_cases(Tape& t, const EncoderParams& enc, Parameter& role_emb,
                                  const SimilarCaseSet& sc, const Vocabulary& vocab,
                                  const EncodeOptions& opt = {});

// Per-step attention: the static scorers augmented with W_s·s_t at both
// levels. With s_t = 0 this reproduces the static attentions exactly.
StepAttention step_attention(Tape& t, const EncoderParams& enc, const CaseEncoding& ce,
                             VarId s_t);

// Plain-value snapshot of an encoding for inspection and tests.
struct EncodedCase {
    std::vector<Mat> h_d;               // per utterance (l_i x H)
    Mat h_D;                            // (L x H)
    std::vector<Eigen::VectorXd> a_u;   // per utterance simplices
    Eigen::VectorXd a_d;                // (L)
    Eigen::VectorXd A;                  // (P) joint attention
    Mat C;                              // (L x H)
    std::vector<int> bounds;
    std::vector<int> utt_of_pos;
    std::vector<std::string> pos_token;
};

EncodedCase materialize(const Tape& t, const CaseEncoding& ce);

}  // namespace ccn
