#include "ccn/encoder.hpp"

#include <stdexcept>

namespace ccn {

VarId embed_turn(Tape& t, const EncoderParams& enc, Parameter& role_emb, const Turn& turn,
                 const Vocabulary& vocab) {
    if (turn.tokens.empty()) {
        throw std::runtime_error("encode: turn has no tokens");
    }
    std::vector<int> word_ids;
    word_ids.reserve(turn.tokens.size());
    for (const auto& tok : turn.tokens) {
        word_ids.push_back(vocab.id_or_unk(tok));
    }
    VarId words = t.gather_rows(t.param(*enc.word_emb), std::move(word_ids));
    VarId roles = t.gather_rows(t.param(role_emb),
                                std::vector<int>(turn.tokens.size(), turn.role_id));
    return t.concat_cols({words, roles});
}

CaseEncoding encode_case(Tape& t, const EncoderParams& enc, Parameter& role_emb,
                         const Dialogue& d, const Vocabulary& vocab, const EncodeOptions& opt) {
    if (d.turns.empty()) {
        throw std::runtime_error("encode: dialogue '" + d.id + "' has no turns");
    }
    if (opt.dropout > 0.0 && opt.rng == nullptr) {
        throw std::runtime_error("encode: dropout requested without an rng");
    }
    const Eigen::Index hidden = enc.utt.fwd.hidden;
    CaseEncoding ce;
    ce.n_utt = static_cast<int>(d.turns.size());
    ce.bounds.push_back(0);
    std::vector<VarId> utt_h;
    utt_h.reserve(d.turns.size());
    for (int i = 0; i < ce.n_utt; ++i) {
        const Turn& turn = d.turns[static_cast<std::size_t>(i)];
        VarId s = embed_turn(t, enc, role_emb, turn, vocab);
        if (opt.dropout > 0.0) {
            s = t.dropout(s, opt.dropout, *opt.rng);
        }
        utt_h.push_back(enc.utt.apply(t, s));  // (l_i x H)
        for (const auto& tok : turn.tokens) {
            ce.pos_token.push_back(tok);
            ce.utt_of_pos.push_back(i);
        }
        ce.bounds.push_back(static_cast<int>(ce.pos_token.size()));
    }
    ce.n_pos = static_cast<int>(ce.pos_token.size());
    ce.h_flat = utt_h.size() == 1 ? utt_h[0] : t.concat_rows(utt_h);
    ce.h_flat_T = t.transpose(ce.h_flat);
    ce.word_base = enc.attn_word.base(t, ce.h_flat);

    VarId zero_s = t.leaf(Mat::Zero(hidden, 1));
    VarId word_scores = enc.attn_word.scores(t, ce.h_flat, ce.word_base, zero_s);
    ce.a_word = t.softmax_segments(word_scores, ce.bounds);

    // Utterance summaries h^U_i = Σ_j a_word[i][j] · h_flat[i][j]
    std::vector<VarId> summaries(static_cast<std::size_t>(ce.n_utt));
    for (int i = 0; i < ce.n_utt; ++i) {
        const int b = ce.bounds[static_cast<std::size_t>(i)];
        const int len = ce.bounds[static_cast<std::size_t>(i) + 1] - b;
        VarId aw = t.slice_rows(ce.a_word, b, len);          // (l_i x 1)
        VarId ht = t.slice_cols(ce.h_flat_T, b, len);        // (H x l_i)
        summaries[static_cast<std::size_t>(i)] = t.matmul(ht, aw);  // (H x 1)
    }
    VarId h_u = t.transpose(t.concat_cols(summaries));  // (L x H)
    if (opt.dropout > 0.0) {
        h_u = t.dropout(h_u, opt.dropout, *opt.rng);
    }
    ce.h_dia = enc.dia.apply(t, h_u);  // (L x H)
    ce.h_dia_T = t.transpose(ce.h_dia);
    ce.utt_base = enc.attn_utt.base(t, ce.h_dia);
    VarId utt_scores = enc.attn_utt.scores(t, ce.h_dia, ce.utt_base, zero_s);
    ce.a_utt = t.softmax(utt_scores);
    ce.a_joint = t.mul(t.gather_rows(ce.a_utt, ce.utt_of_pos), ce.a_word);

    VarId x = ce.h_dia;
    for (const auto& block : enc.blocks) {
        x = block.apply(t, x);
    }
    ce.ctx = x;
    ce.ctx_T = t.transpose(ce.ctx);
    ce.h_last = t.slice_cols(ce.h_dia_T, ce.n_utt - 1, 1);  // (H x 1)
    return ce;
}

Dialogue make_sc_dialogue(const SimilarCaseSet& sc) {
    if (sc.cases.empty()) {
        throw std::runtime_error("encode: similar-case set is empty");
    }
    Dialogue d;
    d.id = "sc:" + sc.target_id;
    for (std::size_t i = 0; i < sc.cases.size(); ++i) {
        if (i) {
            Turn sep;
            sep.role_id = RoleTable::kSepRole;
            sep.tokens = {"<case_sep>"};
            d.turns.push_back(std::move(sep));
        }
        const Dialogue& c = sc.cases[i].first;
        d.turns.insert(d.turns.end(), c.turns.begin(), c.turns.end());
    }
    return d;
}

CaseEncoding encode_similar_cases(Tape& t, const EncoderParams& enc, Parameter& role_emb,
                                  const SimilarCaseSet& sc, const Vocabulary& vocab,
                                  const EncodeOptions& opt) {
    return encode_case(t, enc, role_emb, make_sc_dialogue(sc), vocab, opt);
}

StepAttention step_attention(Tape& t, const EncoderParams& enc, const CaseEncoding& ce,
                             VarId s_t) {
    StepAttention sa;
    VarId w_scores = enc.attn_word.scores(t, ce.h_flat, ce.word_base, s_t);
    VarId a_w = t.softmax_segments(w_scores, ce.bounds);
    VarId u_scores = enc.attn_utt.scores(t, ce.h_dia, ce.utt_base, s_t);
    VarId a_u = t.softmax(u_scores);
    sa.a_joint = t.mul(t.gather_rows(a_u, ce.utt_of_pos), a_w);
    sa.h_t = t.matmul(ce.h_flat_T, sa.a_joint);
    sa.c_t = t.matmul(ce.ctx_T, a_u);
    return sa;
}

EncodedCase materialize(const Tape& t, const CaseEncoding& ce) {
    EncodedCase ec;
    ec.bounds = ce.bounds;
    ec.utt_of_pos = ce.utt_of_pos;
    ec.pos_token = ce.pos_token;
    const Mat& h_flat = t.val(ce.h_flat);
    const Mat& a_word = t.val(ce.a_word);
    for (int i = 0; i < ce.n_utt; ++i) {
        const int b = ce.bounds[static_cast<std::size_t>(i)];
        const int len = ce.bounds[static_cast<std::size_t>(i) + 1] - b;
        ec.h_d.push_back(h_flat.middleRows(b, len));
        ec.a_u.push_back(a_word.col(0).segment(b, len));
    }
    ec.h_D = t.val(ce.h_dia);
    ec.a_d = t.val(ce.a_utt).col(0);
    ec.A = t.val(ce.a_joint).col(0);
    ec.C = t.val(ce.ctx);
    return ec;
}

}  // namespace ccn
