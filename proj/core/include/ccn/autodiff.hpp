#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ccn/rng.hpp"

namespace ccn {

using Mat = Eigen::MatrixXd;
using VarId = std::int32_t;

// One learnable tensor. Stored out-of-tape so its value survives across
// forward passes; the tape accumulates into `grad` on backward().
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
};

// Registry of all learnable tensors of a model, in registration order.
// Registration order is the checkpoint order, so it must be deterministic.
class ParamStore {
public:
    Parameter* add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::deque<Parameter>& items() { return items_; }
    const std::deque<Parameter>& items() const { return items_; }

    void zero_grad();
    std::size_t total_elements() const;

private:
    std::deque<Parameter> items_;  // deque: stable addresses
    std::unordered_map<std::string, Parameter*> by_name_;
};

// Reverse-mode tape. Build a graph with the op methods, then call
// backward(loss) once; gradients land in the bound Parameters.
//
// Column vectors are (n x 1) matrices; token/utterance sequences are
// (positions x width) matrices with one row per position.
class Tape {
public:
    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    VarId leaf(Mat v, bool requires_grad = false);
    VarId param(Parameter& p);

    const Mat& val(VarId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Mat& grad_of(VarId id) const;
    bool requires_grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].rg; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation
    // order, then flushes node gradients into bound Parameters.
    void backward(VarId loss);

    // ---- elementwise ----
    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId mul(VarId a, VarId b);
    VarId caffine(VarId x, double a, double b);  // a*x + b
    VarId cmul(VarId x, double a) { return caffine(x, a, 0.0); }
    VarId one_minus(VarId x) { return caffine(x, -1.0, 1.0); }
    VarId tanh(VarId x);
    VarId sigmoid(VarId x);
    VarId relu(VarId x);
    VarId log(VarId x);
    VarId clamp_min(VarId x, double floor);

    // ---- linear algebra ----
    VarId matmul(VarId a, VarId b);
    VarId transpose(VarId x);
    // X:(n x in), W:(out x in), b:(out x 1) -> (n x out); rows are positions.
    VarId linear(VarId x, VarId w, VarId b);
    VarId add_rowvec(VarId x, VarId v);  // broadcast v:(k x 1) over rows of x:(n x k)
    VarId rowdot(VarId a, VarId b);      // row-wise dot -> (n x 1)

    // ---- scalar (1 x 1) helpers ----
    VarId smul(VarId s, VarId x);  // scalar node times matrix node
    VarId pick(VarId x, Eigen::Index i, Eigen::Index j = 0);
    VarId sum(VarId x);
    VarId sum_squares(VarId x);

    // ---- shape ----
    VarId concat_rows(const std::vector<VarId>& xs);
    VarId concat_cols(const std::vector<VarId>& xs);
    VarId slice_rows(VarId x, Eigen::Index r0, Eigen::Index n);
    VarId slice_cols(VarId x, Eigen::Index c0, Eigen::Index n);
    VarId pad_rows(VarId x, Eigen::Index total, Eigen::Index offset);

    // ---- indexed ----
    VarId gather_rows(VarId table, std::vector<int> ids);
    // x:(n x 1) summed into (out x 1) buckets by seg_of[p].
    VarId segment_sum(VarId x, std::vector<int> seg_of, int out);

    // ---- softmax family ----
    VarId softmax(VarId x);       // column vector
    VarId softmax_rows(VarId x);  // independent softmax per row
    // Independent softmax over contiguous row ranges of a column vector;
    // bounds has one entry per segment end plus leading 0.
    VarId softmax_segments(VarId x, std::vector<int> bounds);

    // ---- fused layers ----
    // x:(in x 1), h,c:(H x 1), wx:(4H x in), wh:(4H x H), b:(4H x 1).
    // Returns stacked [h'; c'] as (2H x 1); slice to use. Gate order i,f,g,o.
    VarId lstm_step(VarId x, VarId h, VarId c, VarId wx, VarId wh, VarId b);
    // Row-wise layer norm; gamma,beta:(k x 1) broadcast over rows.
    VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps = 1e-5);

    // Inverted dropout; identity when drop_rate <= 0. Draws one uniform per
    // entry from rng, so the rng stream advances deterministically.
    VarId dropout(VarId x, double drop_rate, Rng& rng);

private:
    struct Node {
        Mat val;
        Mat grad;  // empty until touched by backward
        std::function<void()> back;
        bool rg = false;
    };

    VarId push(Mat v, bool rg, std::function<void()> back = nullptr);
    Mat& grad_buf(VarId id);
    void accum(VarId id, const Mat& g);
    Node& node(VarId id) { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::vector<std::pair<VarId, Parameter*>> bound_;
    std::unordered_map<const Parameter*, VarId> bound_memo_;
};

}  // namespace ccn
