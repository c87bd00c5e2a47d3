#pragma once

#include "ccn/autodiff.hpp"
#include "ccn/rng.hpp"

#include <string>
#include <utility>

namespace ccn {

// Glorot-uniform fill: ±sqrt(6 / (rows + cols)).
void init_glorot(Mat& w, Rng& rng);
// Uniform fill in ±scale (embedding tables).
void init_uniform(Mat& w, Rng& rng, double scale);

// Affine map y = x·Wᵀ + b applied row-wise; rows are positions.
struct Dense {
    Parameter* w = nullptr;  // (out x in)
    Parameter* b = nullptr;  // (out x 1)

    void init(ParamStore& ps, const std::string& name, Eigen::Index out, Eigen::Index in,
              Rng& rng);
    VarId apply(Tape& t, VarId x) const { return t.linear(x, t.param(*w), t.param(*b)); }
};

// Single recurrent cell; gate order i,f,g,o; forget bias starts at 1.
struct LstmCell {
    Parameter* wx = nullptr;  // (4H x in)
    Parameter* wh = nullptr;  // (4H x H)
    Parameter* b = nullptr;   // (4H x 1)
    Eigen::Index hidden = 0;

    void init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
              Eigen::Index in, Rng& rng);
    // x:(in x 1), h,c:(H x 1) -> (h', c')
    std::pair<VarId, VarId> step(Tape& t, VarId x, VarId h, VarId c) const;
};

// Bidirectional recurrence over a (positions x in) sequence; the 2H-wide
// concatenation is projected back to H so attention inner products stay
// shape-consistent.
struct BiLstm {
    LstmCell fwd;
    LstmCell bwd;
    Dense proj;  // (H x 2H)

    void init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
              Eigen::Index in, Rng& rng);
    VarId apply(Tape& t, VarId seq) const;  // (n x in) -> (n x H)
};

// Attention scorer parameters: score_j = tanh(W h_j + b + W_s s)ᵀ h_j.
// W_s conditions on the decoder state; with s = 0 the scorer reduces to the
// static form used when encoding.
struct AttnParams {
    Dense pre;                 // W:(H x H), b:(H x 1)
    Parameter* w_s = nullptr;  // (H x H)

    void init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size, Rng& rng);
    // Static part of the pre-activation, computable once per encoding.
    VarId base(Tape& t, VarId hs) const { return pre.apply(t, hs); }
    // scores over rows of hs given base and decoder state s:(H x 1).
    VarId scores(Tape& t, VarId hs, VarId base_v, VarId s) const;
};

// Post-norm encoder block: self-attention + position-wise feed-forward,
// residuals around both, layer norm after each residual.
struct TransformerBlock {
    Dense wq, wk, wv, wo;  // (H x H) each
    Dense ff1;             // (4H x H)
    Dense ff2;             // (H x 4H)
    Parameter* ln1_g = nullptr;
    Parameter* ln1_b = nullptr;
    Parameter* ln2_g = nullptr;
    Parameter* ln2_b = nullptr;
    int heads = 0;

    void init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size, int n_heads,
              Rng& rng);
    VarId apply(Tape& t, VarId x) const;  // (L x H) -> (L x H)
};

}  // namespace ccn
