#include "ccn/autodiff.hpp"

#include <cmath>

namespace ccn {

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Mat& a) {
    throw std::runtime_error("tape: bad shape in " + op + " (" + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + ")");
}

void require(bool ok, const char* what) {
    if (!ok) {
        throw std::runtime_error(std::string("tape: ") + what);
    }
}

}  // namespace

Parameter* ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    require(by_name_.find(name) == by_name_.end(), "duplicate parameter name");
    items_.push_back(Parameter{name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
    Parameter* p = &items_.back();
    by_name_[name] = p;
    return p;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

void ParamStore::zero_grad() {
    for (auto& p : items_) {
        p.grad.setZero();
    }
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) {
        n += static_cast<std::size_t>(p.value.size());
    }
    return n;
}

VarId Tape::push(Mat v, bool rg, std::function<void()> back) {
    Node n;
    n.val = std::move(v);
    n.rg = rg;
    if (rg) {
        n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
}

Mat& Tape::grad_buf(VarId id) {
    Node& n = node(id);
    if (n.grad.size() == 0) {
        n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    }
    return n.grad;
}

void Tape::accum(VarId id, const Mat& g) {
    if (!node(id).rg) {
        return;
    }
    grad_buf(id) += g;
}

const Mat& Tape::grad_of(VarId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    require(n.grad.size() != 0, "grad not populated (did backward run?)");
    return n.grad;
}

VarId Tape::leaf(Mat v, bool requires_grad) {
    return push(std::move(v), requires_grad);
}

VarId Tape::param(Parameter& p) {
    auto it = bound_memo_.find(&p);
    if (it != bound_memo_.end()) {
        return it->second;
    }
    VarId id = push(p.value, true);
    bound_.emplace_back(id, &p);
    bound_memo_[&p] = id;
    return id;
}

void Tape::backward(VarId loss) {
    require(val(loss).rows() == 1 && val(loss).cols() == 1, "backward target must be scalar");
    grad_buf(loss)(0, 0) = 1.0;
    for (VarId i = loss; i >= 0; --i) {
        Node& n = node(i);
        if (n.back && n.grad.size() != 0) {
            n.back();
        }
    }
    for (auto& [id, p] : bound_) {
        Node& n = node(id);
        if (n.grad.size() != 0) {
            p->grad += n.grad;
        }
    }
}

// ---------------- elementwise ----------------

VarId Tape::add(VarId a, VarId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
        shape_fail("add", av);
    }
    VarId out = push(av + bv, requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        accum(a, g);
        accum(b, g);
    };
    return out;
}

VarId Tape::sub(VarId a, VarId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
        shape_fail("sub", av);
    }
    VarId out = push(av - bv, requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        accum(a, g);
        accum(b, Mat(-g));
    };
    return out;
}

VarId Tape::mul(VarId a, VarId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
        shape_fail("mul", av);
    }
    VarId out = push(av.cwiseProduct(bv), requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        accum(a, g.cwiseProduct(val(b)));
        accum(b, g.cwiseProduct(val(a)));
    };
    return out;
}

VarId Tape::caffine(VarId x, double a, double b) {
    Mat y = (val(x).array() * a + b).matrix();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, a, out] {
        accum(x, Mat(node(out).grad * a));
    };
    return out;
}

VarId Tape::tanh(VarId x) {
    Mat y = val(x).array().tanh().matrix();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const Mat& y = node(out).val;
        const Mat& g = node(out).grad;
        accum(x, (g.array() * (1.0 - y.array().square())).matrix());
    };
    return out;
}

VarId Tape::sigmoid(VarId x) {
    Mat y = (1.0 / (1.0 + (-val(x).array()).exp())).matrix();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const Mat& y = node(out).val;
        const Mat& g = node(out).grad;
        accum(x, (g.array() * y.array() * (1.0 - y.array())).matrix());
    };
    return out;
}

VarId Tape::relu(VarId x) {
    Mat y = val(x).cwiseMax(0.0);
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const Mat& g = node(out).grad;
        Mat mask = (val(x).array() > 0.0).cast<double>().matrix();
        accum(x, g.cwiseProduct(mask));
    };
    return out;
}

VarId Tape::log(VarId x) {
    Mat y = val(x).array().log().matrix();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const Mat& g = node(out).grad;
        accum(x, (g.array() / val(x).array()).matrix());
    };
    return out;
}

VarId Tape::clamp_min(VarId x, double floor) {
    Mat y = val(x).cwiseMax(floor);
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, floor, out] {
        const Mat& g = node(out).grad;
        Mat mask = (val(x).array() > floor).cast<double>().matrix();
        accum(x, g.cwiseProduct(mask));
    };
    return out;
}

// ---------------- linear algebra ----------------

VarId Tape::matmul(VarId a, VarId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.cols() != bv.rows()) {
        shape_fail("matmul", av);
    }
    VarId out = push(av * bv, requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        accum(a, g * val(b).transpose());
        accum(b, val(a).transpose() * g);
    };
    return out;
}

VarId Tape::transpose(VarId x) {
    VarId out = push(val(x).transpose(), requires_grad(x));
    node(out).back = [this, x, out] {
        accum(x, node(out).grad.transpose());
    };
    return out;
}

VarId Tape::linear(VarId x, VarId w, VarId b) {
    const Mat& xv = val(x);
    const Mat& wv = val(w);
    const Mat& bv = val(b);
    if (xv.cols() != wv.cols() || bv.rows() != wv.rows() || bv.cols() != 1) {
        shape_fail("linear", xv);
    }
    Mat y = xv * wv.transpose();
    y.rowwise() += bv.col(0).transpose();
    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    VarId out = push(std::move(y), rg);
    node(out).back = [this, x, w, b, out] {
        const Mat& g = node(out).grad;
        accum(x, g * val(w));
        accum(w, g.transpose() * val(x));
        accum(b, g.colwise().sum().transpose());
    };
    return out;
}

VarId Tape::add_rowvec(VarId x, VarId v) {
    const Mat& xv = val(x);
    const Mat& vv = val(v);
    if (vv.cols() != 1 || vv.rows() != xv.cols()) {
        shape_fail("add_rowvec", vv);
    }
    Mat y = xv;
    y.rowwise() += vv.col(0).transpose();
    VarId out = push(std::move(y), requires_grad(x) || requires_grad(v));
    node(out).back = [this, x, v, out] {
        const Mat& g = node(out).grad;
        accum(x, g);
        accum(v, g.colwise().sum().transpose());
    };
    return out;
}

VarId Tape::rowdot(VarId a, VarId b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
        shape_fail("rowdot", av);
    }
    Mat y = av.cwiseProduct(bv).rowwise().sum();
    VarId out = push(std::move(y), requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;  // (n x 1)
        accum(a, (val(b).array().colwise() * g.col(0).array()).matrix());
        accum(b, (val(a).array().colwise() * g.col(0).array()).matrix());
    };
    return out;
}

// ---------------- scalar helpers ----------------

VarId Tape::smul(VarId s, VarId x) {
    const Mat& sv = val(s);
    require(sv.rows() == 1 && sv.cols() == 1, "smul scalar must be 1x1");
    VarId out = push(sv(0, 0) * val(x), requires_grad(s) || requires_grad(x));
    node(out).back = [this, s, x, out] {
        const Mat& g = node(out).grad;
        Mat ds(1, 1);
        ds(0, 0) = g.cwiseProduct(val(x)).sum();
        accum(s, ds);
        accum(x, Mat(val(s)(0, 0) * g));
    };
    return out;
}

VarId Tape::pick(VarId x, Eigen::Index i, Eigen::Index j) {
    Mat y(1, 1);
    y(0, 0) = val(x)(i, j);
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, i, j, out] {
        if (!node(x).rg) {
            return;
        }
        grad_buf(x)(i, j) += node(out).grad(0, 0);
    };
    return out;
}

VarId Tape::sum(VarId x) {
    Mat y(1, 1);
    y(0, 0) = val(x).sum();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const double g = node(out).grad(0, 0);
        accum(x, Mat(Mat::Constant(val(x).rows(), val(x).cols(), g)));
    };
    return out;
}

VarId Tape::sum_squares(VarId x) {
    Mat y(1, 1);
    y(0, 0) = val(x).squaredNorm();
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        const double g = node(out).grad(0, 0);
        accum(x, Mat(2.0 * g * val(x)));
    };
    return out;
}

// ---------------- shape ----------------

VarId Tape::concat_rows(const std::vector<VarId>& xs) {
    require(!xs.empty(), "concat_rows of nothing");
    Eigen::Index rows = 0;
    Eigen::Index cols = val(xs[0]).cols();
    bool rg = false;
    for (VarId x : xs) {
        require(val(x).cols() == cols, "concat_rows column mismatch");
        rows += val(x).rows();
        rg = rg || requires_grad(x);
    }
    Mat y(rows, cols);
    Eigen::Index r = 0;
    for (VarId x : xs) {
        y.middleRows(r, val(x).rows()) = val(x);
        r += val(x).rows();
    }
    VarId out = push(std::move(y), rg);
    node(out).back = [this, xs, out] {
        const Mat& g = node(out).grad;
        Eigen::Index r = 0;
        for (VarId x : xs) {
            accum(x, g.middleRows(r, val(x).rows()));
            r += val(x).rows();
        }
    };
    return out;
}

VarId Tape::concat_cols(const std::vector<VarId>& xs) {
    require(!xs.empty(), "concat_cols of nothing");
    Eigen::Index cols = 0;
    Eigen::Index rows = val(xs[0]).rows();
    bool rg = false;
    for (VarId x : xs) {
        require(val(x).rows() == rows, "concat_cols row mismatch");
        cols += val(x).cols();
        rg = rg || requires_grad(x);
    }
    Mat y(rows, cols);
    Eigen::Index c = 0;
    for (VarId x : xs) {
        y.middleCols(c, val(x).cols()) = val(x);
        c += val(x).cols();
    }
    VarId out = push(std::move(y), rg);
    node(out).back = [this, xs, out] {
        const Mat& g = node(out).grad;
        Eigen::Index c = 0;
        for (VarId x : xs) {
            accum(x, g.middleCols(c, val(x).cols()));
            c += val(x).cols();
        }
    };
    return out;
}

VarId Tape::slice_rows(VarId x, Eigen::Index r0, Eigen::Index n) {
    VarId out = push(val(x).middleRows(r0, n), requires_grad(x));
    node(out).back = [this, x, r0, n, out] {
        if (!node(x).rg) {
            return;
        }
        grad_buf(x).middleRows(r0, n) += node(out).grad;
    };
    return out;
}

VarId Tape::slice_cols(VarId x, Eigen::Index c0, Eigen::Index n) {
    VarId out = push(val(x).middleCols(c0, n), requires_grad(x));
    node(out).back = [this, x, c0, n, out] {
        if (!node(x).rg) {
            return;
        }
        grad_buf(x).middleCols(c0, n) += node(out).grad;
    };
    return out;
}

VarId Tape::pad_rows(VarId x, Eigen::Index total, Eigen::Index offset) {
    const Mat& xv = val(x);
    require(offset + xv.rows() <= total, "pad_rows overflow");
    Mat y = Mat::Zero(total, xv.cols());
    y.middleRows(offset, xv.rows()) = xv;
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, offset, out] {
        accum(x, node(out).grad.middleRows(offset, val(x).rows()));
    };
    return out;
}

// ---------------- indexed ----------------

VarId Tape::gather_rows(VarId table, std::vector<int> ids) {
    const Mat& tv = val(table);
    Mat y(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        require(ids[r] >= 0 && ids[r] < tv.rows(), "gather_rows index out of range");
        y.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
    }
    VarId out = push(std::move(y), requires_grad(table));
    node(out).back = [this, table, ids = std::move(ids), out] {
        if (!node(table).rg) {
            return;
        }
        const Mat& g = node(out).grad;
        Mat& tg = grad_buf(table);
        for (std::size_t r = 0; r < ids.size(); ++r) {
            tg.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
        }
    };
    return out;
}

VarId Tape::segment_sum(VarId x, std::vector<int> seg_of, int out_size) {
    const Mat& xv = val(x);
    require(xv.cols() == 1, "segment_sum wants a column vector");
    require(static_cast<std::size_t>(xv.rows()) == seg_of.size(), "segment_sum index size");
    Mat y = Mat::Zero(out_size, 1);
    for (std::size_t p = 0; p < seg_of.size(); ++p) {
        require(seg_of[p] >= 0 && seg_of[p] < out_size, "segment_sum bucket out of range");
        y(seg_of[p], 0) += xv(static_cast<Eigen::Index>(p), 0);
    }
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, seg_of = std::move(seg_of), out] {
        if (!node(x).rg) {
            return;
        }
        const Mat& g = node(out).grad;
        Mat& xg = grad_buf(x);
        for (std::size_t p = 0; p < seg_of.size(); ++p) {
            xg(static_cast<Eigen::Index>(p), 0) += g(seg_of[p], 0);
        }
    };
    return out;
}

// ---------------- softmax family ----------------

namespace {

void softmax_span(const double* x, double* y, Eigen::Index n) {
    double mx = x[0];
    for (Eigen::Index i = 1; i < n; ++i) {
        mx = std::max(mx, x[i]);
    }
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        z += y[i];
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] /= z;
    }
}

// dx = y .* (g - <g, y>)
void softmax_span_back(const double* y, const double* g, double* dx, Eigen::Index n) {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        dot += g[i] * y[i];
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        dx[i] += y[i] * (g[i] - dot);
    }
}

}  // namespace

VarId Tape::softmax(VarId x) {
    const Mat& xv = val(x);
    require(xv.cols() == 1 && xv.rows() >= 1, "softmax wants a column vector");
    Mat y(xv.rows(), 1);
    softmax_span(xv.data(), y.data(), xv.rows());
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        if (!node(x).rg) {
            return;
        }
        const Mat& y = node(out).val;
        const Mat& g = node(out).grad;
        Mat& xg = grad_buf(x);
        softmax_span_back(y.data(), g.data(), xg.data(), y.rows());
    };
    return out;
}

VarId Tape::softmax_rows(VarId x) {
    const Mat& xv = val(x);
    Mat y(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        Eigen::RowVectorXd row = xv.row(r);
        Eigen::RowVectorXd out_row(xv.cols());
        softmax_span(row.data(), out_row.data(), xv.cols());
        y.row(r) = out_row;
    }
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, out] {
        if (!node(x).rg) {
            return;
        }
        const Mat& y = node(out).val;
        const Mat& g = node(out).grad;
        Mat& xg = grad_buf(x);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            Eigen::RowVectorXd yr = y.row(r);
            Eigen::RowVectorXd gr = g.row(r);
            Eigen::RowVectorXd dr = Eigen::RowVectorXd::Zero(y.cols());
            softmax_span_back(yr.data(), gr.data(), dr.data(), y.cols());
            xg.row(r) += dr;
        }
    };
    return out;
}

VarId Tape::softmax_segments(VarId x, std::vector<int> bounds) {
    const Mat& xv = val(x);
    require(xv.cols() == 1, "softmax_segments wants a column vector");
    require(bounds.size() >= 2 && bounds.front() == 0 &&
                bounds.back() == static_cast<int>(xv.rows()),
            "softmax_segments bad bounds");
    Mat y(xv.rows(), 1);
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        Eigen::Index b = bounds[s];
        Eigen::Index n = bounds[s + 1] - bounds[s];
        require(n > 0, "softmax_segments empty segment");
        softmax_span(xv.data() + b, y.data() + b, n);
    }
    VarId out = push(std::move(y), requires_grad(x));
    node(out).back = [this, x, bounds = std::move(bounds), out] {
        if (!node(x).rg) {
            return;
        }
        const Mat& y = node(out).val;
        const Mat& g = node(out).grad;
        Mat& xg = grad_buf(x);
        for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
            Eigen::Index b = bounds[s];
            Eigen::Index n = bounds[s + 1] - bounds[s];
            softmax_span_back(y.data() + b, g.data() + b, xg.data() + b, n);
        }
    };
    return out;
}

// ---------------- fused layers ----------------

VarId Tape::lstm_step(VarId x, VarId h, VarId c, VarId wx, VarId wh, VarId b) {
    const Mat& xv = val(x);
    const Mat& hv = val(h);
    const Mat& cv = val(c);
    const Eigen::Index hidden = hv.rows();
    require(val(wx).rows() == 4 * hidden && val(wh).rows() == 4 * hidden &&
                val(b).rows() == 4 * hidden,
            "lstm_step shapes");
    Mat z = val(wx) * xv + val(wh) * hv + val(b);
    Mat gi = (1.0 / (1.0 + (-z.topRows(hidden).array()).exp())).matrix();
    Mat gf = (1.0 / (1.0 + (-z.middleRows(hidden, hidden).array()).exp())).matrix();
    Mat gg = z.middleRows(2 * hidden, hidden).array().tanh().matrix();
    Mat go = (1.0 / (1.0 + (-z.bottomRows(hidden).array()).exp())).matrix();
    Mat c_new = gf.cwiseProduct(cv) + gi.cwiseProduct(gg);
    Mat tc = c_new.array().tanh().matrix();
    Mat stacked(2 * hidden, 1);
    stacked.topRows(hidden) = go.cwiseProduct(tc);
    stacked.bottomRows(hidden) = c_new;
    bool rg = requires_grad(x) || requires_grad(h) || requires_grad(c) ||
              requires_grad(wx) || requires_grad(wh) || requires_grad(b);
    VarId out = push(std::move(stacked), rg);
    node(out).back = [this, x, h, c, wx, wh, b, out, gi = std::move(gi), gf = std::move(gf),
                      gg = std::move(gg), go = std::move(go), tc = std::move(tc), hidden] {
        const Mat& g = node(out).grad;
        Mat dh_new = g.topRows(hidden);
        Mat dc_new = g.bottomRows(hidden);
        Mat dc_tot = dc_new + (dh_new.array() * go.array() * (1.0 - tc.array().square())).matrix();
        Mat d_go = dh_new.cwiseProduct(tc);
        Mat d_gi = dc_tot.cwiseProduct(gg);
        Mat d_gf = dc_tot.cwiseProduct(val(c));
        Mat d_gg = dc_tot.cwiseProduct(gi);
        Mat dz(4 * hidden, 1);
        dz.topRows(hidden) = (d_gi.array() * gi.array() * (1.0 - gi.array())).matrix();
        dz.middleRows(hidden, hidden) = (d_gf.array() * gf.array() * (1.0 - gf.array())).matrix();
        dz.middleRows(2 * hidden, hidden) = (d_gg.array() * (1.0 - gg.array().square())).matrix();
        dz.bottomRows(hidden) = (d_go.array() * go.array() * (1.0 - go.array())).matrix();
        accum(c, dc_tot.cwiseProduct(gf));
        accum(wx, dz * val(x).transpose());
        accum(wh, dz * val(h).transpose());
        accum(b, dz);
        accum(x, val(wx).transpose() * dz);
        accum(h, val(wh).transpose() * dz);
    };
    return out;
}

VarId Tape::layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
    const Mat& xv = val(x);
    const Eigen::Index cols = xv.cols();
    require(val(gamma).rows() == cols && val(beta).rows() == cols, "layer_norm shapes");
    Mat xhat(xv.rows(), cols);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        double mu = xv.row(r).mean();
        double var = (xv.row(r).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = (xv.row(r).array() - mu) * is;
    }
    Mat y = xhat;
    y.array().rowwise() *= val(gamma).col(0).transpose().array();
    y.rowwise() += val(beta).col(0).transpose();
    bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    VarId out = push(std::move(y), rg);
    node(out).back = [this, x, gamma, beta, out, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)] {
        const Mat& g = node(out).grad;
        const Eigen::Index n = g.cols();
        Mat dgamma = Mat::Zero(n, 1);
        Mat dbeta = Mat::Zero(n, 1);
        Mat dx = Mat::Zero(g.rows(), n);
        const auto gam = val(gamma).col(0).transpose().array();
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            Eigen::ArrayXXd gy = g.row(r).array();
            Eigen::ArrayXXd xh = xhat.row(r).array();
            dgamma.col(0).array() += (gy * xh).transpose();
            dbeta.col(0).array() += gy.transpose();
            Eigen::ArrayXXd gg = gy * gam;
            double m1 = gg.sum() / static_cast<double>(n);
            double m2 = (gg * xh).sum() / static_cast<double>(n);
            dx.row(r) = (inv_std(r) * (gg - m1 - xh * m2)).matrix();
        }
        accum(x, dx);
        accum(gamma, dgamma);
        accum(beta, dbeta);
    };
    return out;
}

VarId Tape::dropout(VarId x, double drop_rate, Rng& rng) {
    if (drop_rate <= 0.0) {
        return x;
    }
    require(drop_rate < 1.0, "dropout rate must be < 1");
    const Mat& xv = val(x);
    const double keep = 1.0 - drop_rate;
    Mat mask(xv.rows(), xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
            mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
        }
    }
    VarId out = push(xv.cwiseProduct(mask), requires_grad(x));
    node(out).back = [this, x, out, mask = std::move(mask)] {
        accum(x, node(out).grad.cwiseProduct(mask));
    };
    return out;
}

}  // namespace ccn
