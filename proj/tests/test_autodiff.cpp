#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ccn/autodiff.hpp"

#include <cmath>
#include <functional>
#include <vector>

using ccn::Mat;
using ccn::Tape;
using ccn::VarId;

namespace {

Mat random_mat(ccn::Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
               double hi = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(lo, hi);
    }
    return m;
}

// Entries kept away from zero so kinked ops (relu) see no sign flips under
// the finite-difference probe.
Mat random_mat_off_zero(ccn::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double mag = rng.uniform(0.2, 1.0);
        m.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return m;
}

using GraphFn = std::function<VarId(Tape&, const std::vector<VarId>&)>;

// One backward pass against central finite differences on every entry of
// every input.
void check_gradients(const std::vector<Mat>& inputs, const GraphFn& fn, double tol = 1e-6) {
    auto run = [&](const std::vector<Mat>& vals, std::vector<ccn::Parameter>& params,
                   bool backward) {
        params.clear();
        params.reserve(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) {
            params.push_back(ccn::Parameter{"p" + std::to_string(i), vals[i],
                                            Mat::Zero(vals[i].rows(), vals[i].cols())});
        }
        Tape t;
        std::vector<VarId> ids;
        for (auto& p : params) {
            ids.push_back(t.param(p));
        }
        VarId loss = fn(t, ids);
        REQUIRE(t.val(loss).size() == 1);
        const double value = t.val(loss)(0, 0);
        if (backward) {
            t.backward(loss);
        }
        return value;
    };

    std::vector<ccn::Parameter> params;
    run(inputs, params, true);
    std::vector<Mat> analytic;
    for (const auto& p : params) {
        analytic.push_back(p.grad);
    }

    const double eps = 1e-5;
    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        for (Eigen::Index i = 0; i < inputs[pi].size(); ++i) {
            std::vector<Mat> plus = inputs;
            std::vector<Mat> minus = inputs;
            plus[pi].data()[i] += eps;
            minus[pi].data()[i] -= eps;
            std::vector<ccn::Parameter> scratch;
            const double fp = run(plus, scratch, false);
            const double fm = run(minus, scratch, false);
            const double fd = (fp - fm) / (2.0 * eps);
            const double ga = analytic[pi].data()[i];
            const double rel = std::abs(ga - fd) / std::max(1.0, std::abs(ga) + std::abs(fd));
            INFO("input " << pi << " entry " << i << " analytic " << ga << " numeric " << fd);
            CHECK(rel < tol);
        }
    }
}

VarId scalarize(Tape& t, VarId x) { return t.sum_squares(x); }

}  // namespace

TEST_CASE("elementwise ops pass finite-difference checks") {
    ccn::Rng rng(11);
    const Mat a = random_mat(rng, 3, 2);
    const Mat b = random_mat(rng, 3, 2);

    check_gradients({a, b}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.add(in[0], in[1]));
    });
    check_gradients({a, b}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.sub(in[0], in[1]));
    });
    check_gradients({a, b}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.mul(in[0], in[1]));
    });
    check_gradients({a}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.caffine(in[0], 1.7, -0.3));
    });
    check_gradients({a}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.one_minus(in[0]));
    });
    check_gradients({a}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.tanh(in[0]));
    });
    check_gradients({a}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.sigmoid(in[0]));
    });

    const Mat off = random_mat_off_zero(rng, 3, 4);
    check_gradients({off}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.relu(in[0]));
    });

    const Mat positive = random_mat(rng, 3, 2, 0.2, 2.0);
    check_gradients({positive}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.log(in[0]));
    });
    check_gradients({positive}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.clamp_min(in[0], 1e-12));
    });
}

TEST_CASE("clamp_min floors values and zeroes gradients below the floor") {
    Mat x(2, 1);
    x << 0.5, -0.5;
    ccn::Parameter p{"x", x, Mat::Zero(2, 1)};
    Tape t;
    VarId v = t.clamp_min(t.param(p), 0.0);
    CHECK(t.val(v)(0, 0) == 0.5);
    CHECK(t.val(v)(1, 0) == 0.0);
    t.backward(t.sum(v));
    CHECK(p.grad(0, 0) == 1.0);
    CHECK(p.grad(1, 0) == 0.0);
}

TEST_CASE("matrix ops pass finite-difference checks") {
    ccn::Rng rng(12);
    const Mat a = random_mat(rng, 3, 2);
    const Mat b = random_mat(rng, 2, 4);
    check_gradients({a, b}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.matmul(in[0], in[1]));
    });
    check_gradients({a}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.transpose(in[0]));
    });

    const Mat x = random_mat(rng, 4, 3);   // n x in
    const Mat w = random_mat(rng, 2, 3);   // out x in
    const Mat bias = random_mat(rng, 2, 1);
    check_gradients({x, w, bias}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.linear(in[0], in[1], in[2]));
    });

    const Mat v = random_mat(rng, 3, 1);
    check_gradients({x, v}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.add_rowvec(in[0], in[1]));
    });

    const Mat c = random_mat(rng, 4, 3);
    check_gradients({x, c}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.rowdot(in[0], in[1]));
    });
}

TEST_CASE("scalar and shape ops pass finite-difference checks") {
    ccn::Rng rng(13);
    const Mat s = random_mat(rng, 1, 1);
    const Mat x = random_mat(rng, 3, 2);
    check_gradients({s, x}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.smul(in[0], in[1]));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return t.sum_squares(t.pick(in[0], 2, 1));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return t.sum_squares(t.sum(in[0]));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return t.sum_squares(in[0]);
    });

    const Mat y = random_mat(rng, 2, 2);
    check_gradients({x, y}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.concat_rows({in[0], in[1]}));
    });
    const Mat z = random_mat(rng, 3, 3);
    check_gradients({x, z}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.concat_cols({in[0], in[1]}));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.slice_rows(in[0], 1, 2));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.slice_cols(in[0], 1, 1));
    });
    check_gradients({x}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.pad_rows(in[0], 6, 2));
    });
}

TEST_CASE("indexed ops pass finite-difference checks and route mass correctly") {
    ccn::Rng rng(14);
    const Mat table = random_mat(rng, 4, 3);
    check_gradients({table}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.gather_rows(in[0], {2, 0, 2, 3}));
    });

    const Mat col = random_mat(rng, 5, 1);
    check_gradients({col}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.segment_sum(in[0], {1, 0, 1, 2, 1}, 4));
    });

    Mat fixture(4, 1);
    fixture << 1.0, 2.0, 3.0, 4.0;
    Tape t;
    VarId out = t.segment_sum(t.leaf(fixture), {0, 1, 0, 1}, 2);
    CHECK(t.val(out)(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(t.val(out)(1, 0) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("softmax variants normalize and pass finite-difference checks") {
    ccn::Rng rng(15);
    const Mat col = random_mat(rng, 5, 1, -3.0, 3.0);
    check_gradients({col}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.softmax(in[0]));
    });
    const Mat rows = random_mat(rng, 3, 4, -3.0, 3.0);
    check_gradients({rows}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.softmax_rows(in[0]));
    });
    const Mat seg = random_mat(rng, 6, 1, -3.0, 3.0);
    check_gradients({seg}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.softmax_segments(in[0], {0, 2, 6}));
    });

    Tape t;
    VarId sm = t.softmax(t.leaf(col));
    CHECK(t.val(sm).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.val(sm).minCoeff() > 0.0);

    VarId smr = t.softmax_rows(t.leaf(rows));
    for (Eigen::Index r = 0; r < 3; ++r) {
        CHECK(t.val(smr).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

    VarId sms = t.softmax_segments(t.leaf(seg), {0, 2, 6});
    CHECK(t.val(sms).topRows(2).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.val(sms).bottomRows(4).sum() == doctest::Approx(1.0).epsilon(1e-12));

    // Shift invariance: adding a constant per segment leaves the simplex
    // unchanged.
    Mat shifted = seg;
    shifted.topRows(2).array() += 7.5;
    shifted.bottomRows(4).array() -= 2.5;
    VarId sms2 = t.softmax_segments(t.leaf(shifted), {0, 2, 6});
    CHECK((t.val(sms2) - t.val(sms)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("uniform softmax on a two-element column is exactly a half each") {
    Tape t;
    VarId sm = t.softmax(t.leaf(Mat::Zero(2, 1)));
    CHECK(t.val(sm)(0, 0) == 0.5);
    CHECK(t.val(sm)(1, 0) == 0.5);
}

TEST_CASE("recurrent-cell and normalization ops pass finite-difference checks") {
    ccn::Rng rng(16);
    const int hidden = 4;
    const int in_w = 3;
    const Mat x = random_mat(rng, in_w, 1);
    const Mat h = random_mat(rng, hidden, 1);
    const Mat c = random_mat(rng, hidden, 1);
    const Mat wx = random_mat(rng, 4 * hidden, in_w);
    const Mat wh = random_mat(rng, 4 * hidden, hidden);
    const Mat b = random_mat(rng, 4 * hidden, 1);
    check_gradients({x, h, c, wx, wh, b}, [](Tape& t, const std::vector<VarId>& in) {
        return scalarize(t, t.lstm_step(in[0], in[1], in[2], in[3], in[4], in[5]));
    });

    Tape t;
    VarId hc = t.lstm_step(t.leaf(x), t.leaf(h), t.leaf(c), t.leaf(wx), t.leaf(wh), t.leaf(b));
    CHECK(t.val(hc).rows() == 2 * hidden);
    CHECK(t.val(hc).cols() == 1);

    const Mat xs = random_mat(rng, 2, 5);
    const Mat gamma = random_mat(rng, 5, 1, 0.5, 1.5);
    const Mat beta = random_mat(rng, 5, 1);
    check_gradients({xs, gamma, beta}, [](Tape& t2, const std::vector<VarId>& in) {
        return scalarize(t2, t2.layer_norm(in[0], in[1], in[2]));
    });

    // With unit gamma and zero beta every row is standardized.
    Tape t2;
    VarId ln = t2.layer_norm(t2.leaf(xs), t2.leaf(Mat::Ones(5, 1)), t2.leaf(Mat::Zero(5, 1)));
    for (Eigen::Index r = 0; r < 2; ++r) {
        CHECK(t2.val(ln).row(r).mean() == doctest::Approx(0.0).epsilon(1e-10));
        const double var = t2.val(ln).row(r).array().square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("dropout scales kept entries and is the identity at rate zero") {
    ccn::Rng rng(17);
    const Mat x = random_mat(rng, 6, 5, 0.5, 1.0);

    ccn::Rng zero_rng(1);
    Tape t;
    VarId kept = t.dropout(t.leaf(x), 0.0, zero_rng);
    CHECK((t.val(kept) - x).cwiseAbs().maxCoeff() == 0.0);

    ccn::Rng drop_rng(2);
    ccn::Parameter p{"x", x, Mat::Zero(6, 5)};
    Tape t2;
    VarId xd = t2.dropout(t2.param(p), 0.5, drop_rng);
    int kept_count = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double ratio = t2.val(xd).data()[i] / x.data()[i];
        const bool is_zero = t2.val(xd).data()[i] == 0.0;
        const bool is_scaled = std::abs(ratio - 2.0) < 1e-12;
        CHECK((is_zero || is_scaled));
        kept_count += is_scaled ? 1 : 0;
    }
    CHECK(kept_count > 0);
    CHECK(kept_count < x.size());

    // Backward flows exactly through the kept mask with the same scale.
    t2.backward(t2.sum(xd));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const bool was_kept = t2.val(xd).data()[i] != 0.0;
        CHECK(p.grad.data()[i] == (was_kept ? 2.0 : 0.0));
    }
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
    Mat x(2, 1);
    x << 0.3, -0.4;
    ccn::Parameter p{"x", x, Mat::Zero(2, 1)};
    Tape t;
    VarId xi = t.param(p);
    VarId twice = t.add(xi, xi);
    t.backward(t.sum(twice));
    CHECK(p.grad(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p.grad(1, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("plain leaves take no gradients and params bind once") {
    Mat x(2, 2);
    x.setConstant(0.5);
    ccn::Parameter p{"x", x, Mat::Zero(2, 2)};
    Tape t;
    VarId leaf = t.leaf(x);
    VarId bound1 = t.param(p);
    VarId bound2 = t.param(p);
    CHECK(bound1 == bound2);
    CHECK_FALSE(t.requires_grad(leaf));
    CHECK(t.requires_grad(bound1));

    VarId loss = t.sum_squares(t.mul(leaf, bound1));
    t.backward(loss);
    CHECK(p.grad.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("backward demands a scalar loss") {
    Tape t;
    VarId m = t.leaf(Mat::Ones(2, 2), true);
    CHECK_THROWS(t.backward(m));
}

TEST_CASE("shape violations are rejected") {
    Tape t;
    VarId a = t.leaf(Mat::Ones(2, 2));
    VarId b = t.leaf(Mat::Ones(3, 2));
    CHECK_THROWS(t.add(a, b));
    CHECK_THROWS(t.matmul(b, b));
    CHECK_THROWS(t.pad_rows(b, 2, 0));
    CHECK_THROWS(t.gather_rows(a, {5}));
    CHECK_THROWS(t.segment_sum(t.leaf(Mat::Ones(2, 1)), {0, 3}, 2));
}
