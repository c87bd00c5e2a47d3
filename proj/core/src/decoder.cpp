#include "ccn/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ccn {

ExtendedVocab::ExtendedVocab(const Vocabulary& base, const Dialogue& context,
                             const Dialogue* sc_concat)
    : base_(&base) {
    for (const auto& turn : context.turns) {
        for (const auto& tok : turn.tokens) {
            int id = base.lookup(tok);
            if (id < 0) {
                auto it = oov_id_.find(tok);
                if (it == oov_id_.end()) {
                    id = base.size() + static_cast<int>(ctx_oov_.size());
                    ctx_oov_.push_back(tok);
                    oov_id_.emplace(tok, id);
                } else {
                    id = it->second;
                }
            }
            ctx_pos_ids_.push_back(id);
        }
    }
    if (sc_concat) {
        const int below_sc = base.size() + static_cast<int>(ctx_oov_.size());
        for (const auto& turn : sc_concat->turns) {
            for (const auto& tok : turn.tokens) {
                int id = base.lookup(tok);
                if (id < 0) {
                    auto it = oov_id_.find(tok);
                    if (it == oov_id_.end()) {
                        id = below_sc + static_cast<int>(sc_oov_.size());
                        sc_oov_.push_back(tok);
                        oov_id_.emplace(tok, id);
                    } else {
                        id = it->second;
                    }
                }
                sc_pos_ids_.push_back(id);
            }
        }
    }
}

int ExtendedVocab::extended_id(const std::string& tok) const {
    int id = base_->lookup(tok);
    if (id >= 0) {
        return id;
    }
    auto it = oov_id_.find(tok);
    return it == oov_id_.end() ? Vocabulary::kUnk : it->second;
}

const std::string& ExtendedVocab::token(int ext_id) const {
    if (ext_id < 0 || ext_id >= total()) {
        throw std::runtime_error("extended vocab: id " + std::to_string(ext_id) +
                                 " outside [0," + std::to_string(total()) + ")");
    }
    if (ext_id < base_size()) {
        return base_->token(ext_id);
    }
    if (ext_id < base_size() + context_oov_size()) {
        return ctx_oov_[static_cast<std::size_t>(ext_id - base_size())];
    }
    return sc_oov_[static_cast<std::size_t>(ext_id - base_size() - context_oov_size())];
}

StepState init_decoder_state(Tape& t, const ModelParams& mp, const CaseEncoding& target,
                             int max_len) {
    StepState st;
    st.s = target.h_last;
    st.c = t.leaf(Mat::Zero(mp.dec.cell.hidden, 1));
    st.max_len = max_len;
    return st;
}

VarId vocab_distribution(Tape& t, const DecoderParams& dec, VarId c_t, VarId s_t) {
    VarId x = t.transpose(t.concat_rows({c_t, s_t}));  // (1 x 2H)
    VarId logits = dec.out.apply(t, dec.mix.apply(t, x));  // (1 x V)
    return t.softmax(t.transpose(logits));
}

namespace {

VarId gate(Tape& t, Parameter& wh, Parameter& wc, Parameter& ws, Parameter& b, VarId h_t,
           VarId c_t, VarId s_t) {
    VarId z = t.add(t.add(t.matmul(t.param(wh), h_t), t.matmul(t.param(wc), c_t)),
                    t.add(t.matmul(t.param(ws), s_t), t.param(b)));
    return t.sigmoid(z);
}

}  // namespace

VarId vertical_gate(Tape& t, const DecoderParams& dec, VarId h_t, VarId c_t, VarId s_t) {
    return gate(t, *dec.a_h, *dec.a_c, *dec.a_s, *dec.a_b, h_t, c_t, s_t);
}

VarId horizontal_gate(Tape& t, const DecoderParams& dec, VarId h_t, VarId c_t, VarId s_t) {
    return gate(t, *dec.b_h, *dec.b_c, *dec.b_s, *dec.b_b, h_t, c_t, s_t);
}

VarId vertical_extend(Tape& t, VarId v_w, VarId alpha, VarId a_joint, const ExtendedVocab& xv) {
    const int width = xv.base_size() + xv.context_oov_size();
    VarId padded = t.pad_rows(v_w, width, 0);
    VarId copy = t.segment_sum(a_joint, xv.context_pos_ids(), width);
    return t.add(t.smul(alpha, padded), t.smul(t.one_minus(alpha), copy));
}

VarId horizontal_extend(Tape& t, VarId v_d, VarId beta, VarId a_joint_sc,
                        const ExtendedVocab& xv) {
    const int width = xv.total();
    VarId padded = t.pad_rows(v_d, width, 0);
    VarId copy = t.segment_sum(a_joint_sc, xv.sc_pos_ids(), width);
    return t.add(t.smul(t.one_minus(beta), padded), t.smul(beta, copy));
}

StepOutput decode_step(Tape& t, const ModelParams& mp, const ExtendedVocab& xv,
                       const CaseEncoding& target, const CaseEncoding* sc, int prev_ext_id,
                       StepState& state, const EncodeOptions& opt) {
    if (state.step >= state.max_len) {
        throw std::runtime_error("decode: length budget of " + std::to_string(state.max_len) +
                                 " steps exhausted");
    }
    if (!sc && xv.sc_oov_size() > 0) {
        throw std::runtime_error("decode: extended vocab carries SC tokens but no SC encoding");
    }
    const int emb_id = (prev_ext_id >= 0 && prev_ext_id < xv.base_size()) ? prev_ext_id
                                                                          : Vocabulary::kUnk;
    VarId x = t.transpose(t.gather_rows(t.param(*mp.target_enc.word_emb), {emb_id}));
    if (opt.dropout > 0.0) {
        if (opt.rng == nullptr) {
            throw std::runtime_error("decode: dropout requested without an rng");
        }
        x = t.dropout(x, opt.dropout, *opt.rng);
    }
    auto [s_new, c_new] = mp.dec.cell.step(t, x, state.s, state.c);
    StepOutput so;
    so.target_at = step_attention(t, mp.target_enc, target, s_new);
    so.v_w = vocab_distribution(t, mp.dec, so.target_at.c_t, s_new);
    so.alpha = vertical_gate(t, mp.dec, so.target_at.h_t, so.target_at.c_t, s_new);
    so.v_d = vertical_extend(t, so.v_w, so.alpha, so.target_at.a_joint, xv);
    if (sc) {
        so.sc_at = step_attention(t, mp.sc_enc, *sc, s_new);
        so.beta = horizontal_gate(t, mp.dec, so.sc_at.h_t, so.sc_at.c_t, s_new);
        so.v_f = horizontal_extend(t, so.v_d, so.beta, so.sc_at.a_joint, xv);
    } else {
        so.v_f = so.v_d;
    }
    state.s = s_new;
    state.c = c_new;
    ++state.step;
    return so;
}

PairGraph teacher_forced_graph(Tape& t, const ModelParams& mp, const Vocabulary& vocab,
                               const TrainingPair& pair, const SimilarCaseSet* sc,
                               const EncodeOptions& opt, int max_len) {
    std::optional<Dialogue> sc_dialogue;
    if (sc) {
        sc_dialogue = make_sc_dialogue(*sc);
    }
    PairGraph pg{ExtendedVocab(vocab, pair.context, sc_dialogue ? &*sc_dialogue : nullptr),
                 encode_case(t, mp.target_enc, *mp.role_emb, pair.context, vocab, opt),
                 CaseEncoding{},
                 false,
                 {},
                 {}};
    if (sc_dialogue) {
        pg.sc = encode_case(t, mp.sc_enc, *mp.role_emb, *sc_dialogue, vocab, opt);
        pg.has_sc = true;
    }
    for (const auto& tok : pair.target.tokens) {
        pg.target_ext.push_back(pg.xv.extended_id(tok));
    }
    pg.target_ext.push_back(Vocabulary::kEos);
    if (static_cast<int>(pg.target_ext.size()) > max_len) {
        pg.target_ext.resize(static_cast<std::size_t>(max_len));
    }
    StepState st = init_decoder_state(t, mp, pg.target, max_len);
    int prev = Vocabulary::kBos;
    for (int ext : pg.target_ext) {
        StepOutput so =
            decode_step(t, mp, pg.xv, pg.target, pg.has_sc ? &pg.sc : nullptr, prev, st, opt);
        pg.step_vf.push_back(so.v_f);
        prev = ext;
    }
    return pg;
}

namespace {

struct Hyp {
    std::vector<int> ids;  // emitted ids, EOS kept internally
    double score = 0.0;
    StepState st;
    bool done = false;
};

bool hyp_before(const Hyp& a, const Hyp& b) {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.ids < b.ids;
}

}  // namespace

GenResult generate(const ModelParams& mp, const Vocabulary& vocab, const Dialogue& context,
                   const SimilarCaseSet* sc, const GenOptions& opt) {
    if (context.turns.empty()) {
        throw std::runtime_error("generate: empty context");
    }
    if (opt.beam < 1) {
        throw std::runtime_error("generate: beam width must be >= 1");
    }
    Tape t;
    std::optional<Dialogue> sc_dialogue;
    if (sc) {
        sc_dialogue = make_sc_dialogue(*sc);
    }
    ExtendedVocab xv(vocab, context, sc_dialogue ? &*sc_dialogue : nullptr);
    CaseEncoding target = encode_case(t, mp.target_enc, *mp.role_emb, context, vocab);
    CaseEncoding sc_enc;
    if (sc_dialogue) {
        sc_enc = encode_case(t, mp.sc_enc, *mp.role_emb, *sc_dialogue, vocab);
    }

    std::vector<Hyp> hyps(1);
    hyps[0].st = init_decoder_state(t, mp, target, opt.max_len);
    while (true) {
        bool any_live = false;
        std::vector<Hyp> cands;
        for (const Hyp& h : hyps) {
            if (h.done || static_cast<int>(h.ids.size()) >= opt.max_len) {
                Hyp done = h;
                done.done = true;
                cands.push_back(std::move(done));
                continue;
            }
            any_live = true;
            Hyp base = h;
            const int prev = base.ids.empty() ? Vocabulary::kBos : base.ids.back();
            StepOutput so = decode_step(t, mp, xv, target, sc_dialogue ? &sc_enc : nullptr,
                                        prev, base.st);
            const Mat& v = t.val(so.v_f);
            for (int id = 0; id < xv.total(); ++id) {
                Hyp cand = base;
                cand.ids.push_back(id);
                cand.score += std::log(v(id, 0));
                cand.done = (id == Vocabulary::kEos);
                cands.push_back(std::move(cand));
            }
        }
        std::sort(cands.begin(), cands.end(), hyp_before);
        if (static_cast<int>(cands.size()) > opt.beam) {
            cands.resize(static_cast<std::size_t>(opt.beam));
        }
        hyps = std::move(cands);
        if (!any_live || hyps[0].done) {
            break;
        }
    }

    const Hyp& best = hyps[0];
    GenResult out;
    for (int id : best.ids) {
        if (id == Vocabulary::kEos) {
            break;
        }
        out.ext_ids.push_back(id);
        const std::string& tok = xv.token(id);
        out.tokens.push_back(tok);
        if (xv.is_context_oov(id)) {
            out.copied_from_context.push_back(tok);
        } else if (xv.is_sc_oov(id)) {
            out.copied_from_sc.push_back(tok);
        }
    }
    return out;
}

}  // namespace ccn
