#pragma once

#include "ccn/encoder.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ccn {

// Per-example dynamic vocabulary: base ids, then context-only tokens, then
// similar-case-only tokens, in first-occurrence order. Every context and SC
// position maps to exactly one extended id.
class ExtendedVocab {
public:
    // sc_concat is the similar cases joined by make_sc_dialogue (nullptr in
    // vertical-only mode).
    ExtendedVocab(const Vocabulary& base, const Dialogue& context, const Dialogue* sc_concat);

    int base_size() const { return base_->size(); }
    int context_oov_size() const { return static_cast<int>(ctx_oov_.size()); }
    int sc_oov_size() const { return static_cast<int>(sc_oov_.size()); }
    int total() const { return base_size() + context_oov_size() + sc_oov_size(); }

    bool is_context_oov(int ext_id) const {
        return ext_id >= base_size() && ext_id < base_size() + context_oov_size();
    }
    bool is_sc_oov(int ext_id) const {
        return ext_id >= base_size() + context_oov_size() && ext_id < total();
    }

    // Base id, context_oov id, sc_oov id, or UNK when absent everywhere.
    int extended_id(const std::string& tok) const;
    const std::string& token(int ext_id) const;

    const std::vector<int>& context_pos_ids() const { return ctx_pos_ids_; }
    const std::vector<int>& sc_pos_ids() const { return sc_pos_ids_; }
    const Vocabulary& base() const { return *base_; }

private:
    const Vocabulary* base_;
    std::vector<std::string> ctx_oov_;
    std::vector<std::string> sc_oov_;
    std::unordered_map<std::string, int> oov_id_;  // token -> extended id
    std::vector<int> ctx_pos_ids_;
    std::vector<int> sc_pos_ids_;
};

// Decoder recurrence state plus the step budget.
struct StepState {
    VarId s = -1;  // (H x 1)
    VarId c = -1;  // (H x 1)
    int step = 0;
    int max_len = 40;
};

StepState init_decoder_state(Tape& t, const ModelParams& mp, const CaseEncoding& target,
                             int max_len);

// Everything one step produces. In vertical-only mode v_f aliases v_d and
// beta stays -1.
struct StepOutput {
    VarId v_w = -1;    // (B x 1)
    VarId v_d = -1;    // (B+C x 1)
    VarId v_f = -1;    // (B+C+S x 1)
    VarId alpha = -1;  // (1 x 1)
    VarId beta = -1;   // (1 x 1) or -1
    StepAttention target_at;
    StepAttention sc_at;
};

// Single-responsibility building blocks. All probability vectors are columns.
VarId vocab_distribution(Tape& t, const DecoderParams& dec, VarId c_t, VarId s_t);
VarId vertical_gate(Tape& t, const DecoderParams& dec, VarId h_t, VarId c_t, VarId s_t);
VarId horizontal_gate(Tape& t, const DecoderParams& dec, VarId h_t, VarId c_t, VarId s_t);
// v_d = α·v_w (padded) + (1−α)·copy mass aggregated per extended id.
VarId vertical_extend(Tape& t, VarId v_w, VarId alpha, VarId a_joint, const ExtendedVocab& xv);
// v_f = (1−β)·v_d (padded) + β·SC copy mass; sc_oov ids draw probability
// only from the copy term.
VarId horizontal_extend(Tape& t, VarId v_d, VarId beta, VarId a_joint_sc,
                        const ExtendedVocab& xv);

// One full decoding step: advance the cell on the previous token's
// embedding (extended ids fall back to UNK on input), recompute step
// attentions, then compose the distributions.
StepOutput decode_step(Tape& t, const ModelParams& mp, const ExtendedVocab& xv,
                       const CaseEncoding& target, const CaseEncoding* sc, int prev_ext_id,
                       StepState& state, const EncodeOptions& opt = {});

// Teacher-forced rollout for one training pair: encodes both cases, feeds
// the gold prefix, and collects every step's v_f next to the gold extended
// ids (gold tokens absent from every source map to UNK).
struct PairGraph {
    ExtendedVocab xv;
    CaseEncoding target;
    CaseEncoding sc;
    bool has_sc = false;
    std::vector<VarId> step_vf;
    std::vector<int> target_ext;
};

PairGraph teacher_forced_graph(Tape& t, const ModelParams& mp, const Vocabulary& vocab,
                               const TrainingPair& pair, const SimilarCaseSet* sc,
                               const EncodeOptions& opt, int max_len);

struct GenOptions {
    int max_len = 40;
    int beam = 1;  // 1 = greedy
};

struct GenResult {
    std::vector<int> ext_ids;          // emitted ids, EOS not included
    std::vector<std::string> tokens;   // rendered tokens
    std::vector<std::string> copied_from_context;  // emitted via context_oov ids
    std::vector<std::string> copied_from_sc;       // emitted via sc_oov ids
};

// Starts from BOS, stops at EOS or max_len. Greedy takes the per-step
// argmax (ties -> lowest extended id); beam keeps `beam` hypotheses scored
// by summed log v_f with no length normalization.
GenResult generate(const ModelParams& mp, const Vocabulary& vocab, const Dialogue& context,
                   const SimilarCaseSet* sc, const GenOptions& opt = {});

}  // namespace ccn
