#include "ccn/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ccn {

void init_glorot(Mat& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            w(i, j) = rng.uniform(-limit, limit);
        }
    }
}

void init_uniform(Mat& w, Rng& rng, double scale) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            w(i, j) = rng.uniform(-scale, scale);
        }
    }
}

void Dense::init(ParamStore& ps, const std::string& name, Eigen::Index out, Eigen::Index in,
                 Rng& rng) {
    w = ps.add(name + ".w", out, in);
    b = ps.add(name + ".b", out, 1);
    init_glorot(w->value, rng);
}

void LstmCell::init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
                    Eigen::Index in, Rng& rng) {
    hidden = hidden_size;
    wx = ps.add(name + ".wx", 4 * hidden, in);
    wh = ps.add(name + ".wh", 4 * hidden, hidden);
    b = ps.add(name + ".b", 4 * hidden, 1);
    init_glorot(wx->value, rng);
    init_glorot(wh->value, rng);
    b->value.middleRows(hidden, hidden).setOnes();  // forget gate bias
}

std::pair<VarId, VarId> LstmCell::step(Tape& t, VarId x, VarId h, VarId c) const {
    VarId fused = t.lstm_step(x, h, c, t.param(*wx), t.param(*wh), t.param(*b));
    VarId h_new = t.slice_rows(fused, 0, hidden);
    VarId c_new = t.slice_rows(fused, hidden, hidden);
    return {h_new, c_new};
}

void BiLstm::init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
                  Eigen::Index in, Rng& rng) {
    fwd.init(ps, name + ".fwd", hidden_size, in, rng);
    bwd.init(ps, name + ".bwd", hidden_size, in, rng);
    proj.init(ps, name + ".proj", hidden_size, 2 * hidden_size, rng);
}

VarId BiLstm::apply(Tape& t, VarId seq) const {
    const Eigen::Index n = t.val(seq).rows();
    const Eigen::Index hidden = fwd.hidden;
    VarId seq_t = t.transpose(seq);  // (in x n): column p is position p
    std::vector<VarId> xs(static_cast<std::size_t>(n));
    for (Eigen::Index p = 0; p < n; ++p) {
        xs[static_cast<std::size_t>(p)] = t.slice_cols(seq_t, p, 1);
    }
    VarId zero = t.leaf(Mat::Zero(hidden, 1));
    std::vector<VarId> hs_f(static_cast<std::size_t>(n));
    VarId h = zero;
    VarId c = zero;
    for (Eigen::Index p = 0; p < n; ++p) {
        std::tie(h, c) = fwd.step(t, xs[static_cast<std::size_t>(p)], h, c);
        hs_f[static_cast<std::size_t>(p)] = h;
    }
    std::vector<VarId> hs_b(static_cast<std::size_t>(n));
    h = zero;
    c = zero;
    for (Eigen::Index p = n - 1; p >= 0; --p) {
        std::tie(h, c) = bwd.step(t, xs[static_cast<std::size_t>(p)], h, c);
        hs_b[static_cast<std::size_t>(p)] = h;
    }
    VarId f_cols = t.concat_cols(hs_f);                        // (H x n)
    VarId b_cols = t.concat_cols(hs_b);                        // (H x n)
    VarId both = t.transpose(t.concat_rows({f_cols, b_cols}));  // (n x 2H)
    return proj.apply(t, both);                                 // (n x H)
}

void AttnParams::init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
                      Rng& rng) {
    pre.init(ps, name, hidden_size, hidden_size, rng);
    w_s = ps.add(name + ".ws", hidden_size, hidden_size);
    init_glorot(w_s->value, rng);
}

VarId AttnParams::scores(Tape& t, VarId hs, VarId base_v, VarId s) const {
    VarId cond = t.matmul(t.param(*w_s), s);            // (H x 1)
    VarId pre_act = t.tanh(t.add_rowvec(base_v, cond));  // (n x H)
    return t.rowdot(pre_act, hs);                        // (n x 1)
}

void TransformerBlock::init(ParamStore& ps, const std::string& name, Eigen::Index hidden_size,
                            int n_heads, Rng& rng) {
    if (n_heads <= 0 || hidden_size % n_heads != 0) {
        throw std::runtime_error("transformer: hidden size " + std::to_string(hidden_size) +
                                 " not divisible by head count " + std::to_string(n_heads));
    }
    heads = n_heads;
    wq.init(ps, name + ".wq", hidden_size, hidden_size, rng);
    wk.init(ps, name + ".wk", hidden_size, hidden_size, rng);
    wv.init(ps, name + ".wv", hidden_size, hidden_size, rng);
    wo.init(ps, name + ".wo", hidden_size, hidden_size, rng);
    ff1.init(ps, name + ".ff1", 4 * hidden_size, hidden_size, rng);
    ff2.init(ps, name + ".ff2", hidden_size, 4 * hidden_size, rng);
    ln1_g = ps.add(name + ".ln1.g", hidden_size, 1);
    ln1_b = ps.add(name + ".ln1.b", hidden_size, 1);
    ln2_g = ps.add(name + ".ln2.g", hidden_size, 1);
    ln2_b = ps.add(name + ".ln2.b", hidden_size, 1);
    ln1_g->value.setOnes();
    ln2_g->value.setOnes();
}

VarId TransformerBlock::apply(Tape& t, VarId x) const {
    const Eigen::Index hidden = t.val(x).cols();
    const Eigen::Index dk = hidden / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    VarId q = wq.apply(t, x);
    VarId k = wk.apply(t, x);
    VarId v = wv.apply(t, x);
    std::vector<VarId> ctx(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        VarId qh = t.slice_cols(q, h * dk, dk);
        VarId kh = t.slice_cols(k, h * dk, dk);
        VarId vh = t.slice_cols(v, h * dk, dk);
        VarId attn = t.softmax_rows(t.cmul(t.matmul(qh, t.transpose(kh)), scale));
        ctx[static_cast<std::size_t>(h)] = t.matmul(attn, vh);
    }
    VarId mixed = wo.apply(t, t.concat_cols(ctx));
    VarId y1 = t.layer_norm(t.add(x, mixed), t.param(*ln1_g), t.param(*ln1_b));
    VarId ff = ff2.apply(t, t.relu(ff1.apply(t, y1)));
    return t.layer_norm(t.add(y1, ff), t.param(*ln2_g), t.param(*ln2_b));
}

}  // namespace ccn
