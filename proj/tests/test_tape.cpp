// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "moile/tape.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace moile;

namespace {

// Finite-difference check of d(scalar node)/d(leaf) against the tape,
// rebuilding the graph per probe. build(tape, leaf_id) must return the loss.
void fd_check_leaf(const Matrix& leaf_value,
                   const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& build,
                   double tol = 1e-4, int max_probes = 64) {
    Tape t;
    Tape::NodeId x = t.leaf(leaf_value, true);
    Tape::NodeId loss = build(t, x);
    t.backward(loss);
    Matrix g = t.grad(x);

    int probes = 0;
    for (int i = 0; i < leaf_value.rows && probes < max_probes; ++i) {
        for (int j = 0; j < leaf_value.cols && probes < max_probes; ++j, ++probes) {
            auto eval = [&](double v) {
                Matrix m = leaf_value;
                m.at(i, j) = v;
                Tape tt;
                Tape::NodeId xx = tt.leaf(m, true);
                return tt.value(build(tt, xx)).at(0, 0);
            };
            const double fd = oracle::central_diff(eval, leaf_value.at(i, j));
            const double denom = std::max({1.0, std::abs(fd), std::abs(g.at(i, j))});
            CHECK(std::abs(g.at(i, j) - fd) / denom < tol);
        }
    }
}

} // namespace

TEST_CASE("backward on sum gives all-ones gradient") {
    Tape t;
    Rng rng(1);
    Matrix x = random_normal(2, 2, 1.0, rng);
    auto xid = t.leaf(x, true);
    auto loss = t.sum_all(xid);
    t.backward(loss);
    Matrix g = t.grad(xid);
    for (double v : g.data) CHECK(v == 1.0);
}

TEST_CASE("backward on squared frobenius norm gives 2x") {
    Tape t;
    Rng rng(2);
    Matrix x = random_normal(3, 2, 1.0, rng);
    auto xid = t.leaf(x, true);
    auto loss = t.frob_sq(xid);
    t.backward(loss);
    CHECK(max_abs_diff(t.grad(xid), scale(x, 2.0)) < 1e-14);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    auto x = t.leaf(Matrix(2, 2), true);
    CHECK_THROWS_AS(t.backward(x), ContractViolation);
}

TEST_CASE("cross-entropy of W x against finite differences") {
    Rng rng(3);
    Matrix w = random_normal(5, 4, 0.7, rng);
    Matrix x = random_normal(4, 3, 1.0, rng);
    std::vector<int> targets{1, 4, 0};
    fd_check_leaf(w, [&](Tape& t, Tape::NodeId wid) {
        auto xid = t.constant(x);
        auto logits = t.matmul(wid, xid);
        return t.cross_entropy_cols(logits, targets);
    });
}

TEST_CASE("gradients flow through every primitive (finite differences)") {
    Rng rng(4);
    Matrix x = random_normal(4, 5, 0.8, rng);
    Matrix other = random_normal(4, 5, 0.8, rng);
    Matrix right = random_normal(5, 3, 0.8, rng);

    SUBCASE("matmul+relu+sum") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto r = t.constant(right);
            return t.sum_all(t.relu(t.matmul(id, r)));
        });
    }
    SUBCASE("hadamard and sub") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto o = t.constant(other);
            return t.frob_sq(t.sub(t.hadamard(id, o), o));
        });
    }
    SUBCASE("transpose and scale") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            return t.frob_sq(t.scale(t.transpose(id), 1.7));
        });
    }
    SUBCASE("rmsnorm") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto o = t.constant(other);
            return t.frob_sq(t.sub(t.rmsnorm_cols(id), o));
        });
    }
    SUBCASE("colwise softmax") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto o = t.constant(other);
            return t.frob_sq(t.sub(t.colwise_softmax(id), o));
        });
    }
    SUBCASE("slices and stacks") {
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto top = t.slice_rows(id, 0, 2);
            auto bot = t.slice_rows(id, 2, 4);
            auto re = t.vstack2(bot, top);
            auto l = t.slice_cols(re, 0, 3);
            auto rr = t.slice_cols(re, 3, 5);
            return t.frob_sq(t.hstack2(rr, l));
        });
    }
    SUBCASE("rowwise scale") {
        Matrix gates = random_normal(1, 5, 1.0, rng);
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto g = t.constant(gates);
            return t.frob_sq(t.rowwise_scale(id, g));
        });
        fd_check_leaf(gates, [&](Tape& t, Tape::NodeId id) {
            auto m = t.constant(x);
            return t.frob_sq(t.rowwise_scale(m, id));
        });
    }
    SUBCASE("scale_by scalar node") {
        Matrix s(1, 1, {0.37});
        fd_check_leaf(s, [&](Tape& t, Tape::NodeId id) {
            auto m = t.constant(x);
            return t.frob_sq(t.scale_by(m, id));
        });
    }
    SUBCASE("gather_cols") {
        Matrix table = random_normal(3, 6, 1.0, rng);
        std::vector<int> idx{0, 2, 2, 5};
        fd_check_leaf(table, [&](Tape& t, Tape::NodeId id) {
            auto g = t.gather_cols(id, idx);
            return t.frob_sq(g);
        });
    }
}

TEST_CASE("randomized autodiff soundness over 100 probes") {
    Rng rng(99);
    int probes = 0;
    while (probes < 100) {
        const int r = 2 + rng.uniform_int(3);
        const int c = 2 + rng.uniform_int(3);
        Matrix x = random_normal(r, c, 1.0, rng);
        Matrix w = random_normal(c, r, 1.0, rng);
        fd_check_leaf(x, [&](Tape& t, Tape::NodeId id) {
            auto wid = t.constant(w);
            auto y = t.matmul(id, wid);           // r x r
            auto z = t.colwise_softmax(y);
            auto n = t.rmsnorm_cols(t.relu(t.add(z, t.scale(y, 0.3)))); // mixed path
            return t.frob_sq(n);
        });
        probes += r * c;
    }
}

TEST_CASE("frozen leaves never receive gradients") {
    Tape t;
    Rng rng(8);
    Matrix w0 = random_normal(3, 3, 1.0, rng);
    Matrix p = random_normal(3, 3, 1.0, rng);
    auto w0id = t.leaf(w0, false);
    auto pid = t.leaf(p, true);
    auto loss = t.frob_sq(t.matmul(w0id, pid));
    t.backward(loss);
    CHECK(frob_norm(t.grad(w0id)) == 0.0);
    CHECK(frob_norm(t.grad(pid)) > 0.0);
}

TEST_CASE("gradient accumulators reset across backward invocations") {
    Tape t;
    auto x = t.leaf(Matrix(2, 2, {1, 2, 3, 4}), true);
    auto loss = t.sum_all(x);
    t.backward(loss);
    Matrix g1 = t.grad(x);
    t.backward(loss);
    Matrix g2 = t.grad(x);
    CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("singular drift value and gradient") {
    Rng rng(21);
    const int d = 12, k = 10, r = 5, p = 2;

    // Build a product with well-separated singular values.
    Matrix b = random_normal(d, r, 1.0, rng);
    Matrix a = random_normal(r, k, 1.0, rng);

    SvdResult ref = svd_of_product(b, a);
    double ref_total = 0.0;
    for (int i = 0; i < p; ++i) ref_total += ref.s[i] * ref.s[i];
    ref_total = std::sqrt(ref_total);

    SUBCASE("zero at the reference point") {
        Tape t;
        auto bid = t.constant(b);
        auto aid = t.constant(a);
        auto merged = t.matmul(bid, aid);
        auto ls = t.singular_drift(merged, b, a, ref_total, p, 1e-8);
        CHECK(t.value(ls).at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("gradient against finite differences after a perturbation") {
        Matrix a2 = a;
        Rng rng2(22);
        for (double& v : a2.data) v += 0.05 * rng2.normal();
        fd_check_leaf(a2, [&](Tape& t, Tape::NodeId aid) {
            auto bid = t.constant(b);
            auto merged = t.matmul(bid, aid);
            return t.singular_drift(merged, b, t.value(aid), ref_total, p, 1e-8);
        }, 1e-3, 30);
    }
}
