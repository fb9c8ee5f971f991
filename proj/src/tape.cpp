// SPDX-License-Identifier: Apache-2.0
#include "moile/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace moile {

namespace {
constexpr double kRmsEps = 1e-5;
}

Tape::NodeId Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, NodeId)> backprop) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backprop)});
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::accumulate(NodeId id, const Matrix& g) {
    if (!nodes_[id].requires_grad) return;
    Matrix& buf = grads_[id];
    if (!touched_[id]) {
        buf = Matrix(nodes_[id].value.rows, nodes_[id].value.cols);
        touched_[id] = 1;
    }
    for (size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
}

Matrix Tape::grad(NodeId id) const {
    if (id >= 0 && static_cast<size_t>(id) < grads_.size() && touched_[id]) return grads_[id];
    return Matrix(nodes_[id].value.rows, nodes_[id].value.cols);
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    touched_.clear();
}

void Tape::backward(NodeId loss) {
    MOILE_REQUIRE(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(), "backward: loss not on this tape");
    const Matrix& lv = nodes_[loss].value;
    MOILE_REQUIRE(lv.rows == 1 && lv.cols == 1, "backward: loss must be a 1x1 scalar");
    grads_.assign(nodes_.size(), Matrix());
    touched_.assign(nodes_.size(), 0);
    grads_[loss] = Matrix(1, 1);
    grads_[loss].at(0, 0) = 1.0;
    touched_[loss] = 1;
    for (NodeId id = loss; id >= 0; --id) {
        if (!touched_[id] || !nodes_[id].backprop) continue;
        nodes_[id].backprop(*this, id);
    }
}

Tape::NodeId Tape::leaf(Matrix value, bool requires_grad) {
    check_finite(value, "leaf");
    return push(std::move(value), requires_grad, nullptr);
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    Matrix out = moile::matmul(av, bv);
    const bool req = needs_grad(a) || needs_grad(b);
    return push(std::move(out), req, [a, b](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        if (t.needs_grad(a)) t.accumulate(a, moile::matmul(g, moile::transpose(t.value(b))));
        if (t.needs_grad(b)) t.accumulate(b, moile::matmul(moile::transpose(t.value(a)), g));
    });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Matrix out = moile::add(value(a), value(b));
    return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    Matrix out = moile::sub(value(a), value(b));
    return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        t.accumulate(a, g);
        if (t.needs_grad(b)) t.accumulate(b, moile::scale(g, -1.0));
    });
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Matrix out = moile::scale(value(a), s);
    return push(std::move(out), needs_grad(a), [a, s](Tape& t, NodeId self) {
        t.accumulate(a, moile::scale(t.grads_[self], s));
    });
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
    Matrix out = moile::hadamard(value(a), value(b));
    return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        if (t.needs_grad(a)) t.accumulate(a, moile::hadamard(g, t.value(b)));
        if (t.needs_grad(b)) t.accumulate(b, moile::hadamard(g, t.value(a)));
    });
}

Tape::NodeId Tape::transpose(NodeId a) {
    Matrix out = moile::transpose(value(a));
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        t.accumulate(a, moile::transpose(t.grads_[self]));
    });
}

Tape::NodeId Tape::relu(NodeId a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::max(x, 0.0);
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& x = t.value(a);
        Matrix da(x.rows, x.cols);
        for (size_t i = 0; i < x.data.size(); ++i) da.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::rmsnorm_cols(NodeId a) {
    const Matrix& x = value(a);
    Matrix out(x.rows, x.cols);
    for (int j = 0; j < x.cols; ++j) {
        double q = 0.0;
        for (int i = 0; i < x.rows; ++i) q += x.at(i, j) * x.at(i, j);
        const double s = 1.0 / std::sqrt(q / x.rows + kRmsEps);
        for (int i = 0; i < x.rows; ++i) out.at(i, j) = x.at(i, j) * s;
    }
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& x = t.value(a);
        Matrix da(x.rows, x.cols);
        for (int j = 0; j < x.cols; ++j) {
            double q = 0.0, xg = 0.0;
            for (int i = 0; i < x.rows; ++i) {
                q += x.at(i, j) * x.at(i, j);
                xg += x.at(i, j) * g.at(i, j);
            }
            const double s = 1.0 / std::sqrt(q / x.rows + kRmsEps);
            const double coef = s * s * s * xg / x.rows;
            for (int i = 0; i < x.rows; ++i) da.at(i, j) = s * g.at(i, j) - coef * x.at(i, j);
        }
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::colwise_softmax(NodeId a) {
    const Matrix& x = value(a);
    Matrix out(x.rows, x.cols);
    for (int j = 0; j < x.cols; ++j) {
        double mx = x.at(0, j);
        for (int i = 1; i < x.rows; ++i) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (int i = 0; i < x.rows; ++i) {
            out.at(i, j) = std::exp(x.at(i, j) - mx);
            sum += out.at(i, j);
        }
        for (int i = 0; i < x.rows; ++i) out.at(i, j) /= sum;
    }
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& p = t.value(self);
        Matrix da(p.rows, p.cols);
        for (int j = 0; j < p.cols; ++j) {
            double gp = 0.0;
            for (int i = 0; i < p.rows; ++i) gp += g.at(i, j) * p.at(i, j);
            for (int i = 0; i < p.rows; ++i) da.at(i, j) = p.at(i, j) * (g.at(i, j) - gp);
        }
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::slice_rows(NodeId a, int r0, int r1) {
    const Matrix& x = value(a);
    MOILE_REQUIRE(0 <= r0 && r0 <= r1 && r1 <= x.rows, "slice_rows: bad range");
    Matrix out(r1 - r0, x.cols);
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(i - r0, j) = x.at(i, j);
    return push(std::move(out), needs_grad(a), [a, r0, r1](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& x = t.value(a);
        Matrix da(x.rows, x.cols);
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < x.cols; ++j) da.at(i, j) = g.at(i - r0, j);
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::slice_cols(NodeId a, int c0, int c1) {
    const Matrix& x = value(a);
    MOILE_REQUIRE(0 <= c0 && c0 <= c1 && c1 <= x.cols, "slice_cols: bad range");
    Matrix out(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
    return push(std::move(out), needs_grad(a), [a, c0, c1](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& x = t.value(a);
        Matrix da(x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i)
            for (int j = c0; j < c1; ++j) da.at(i, j) = g.at(i, j - c0);
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::hstack2(NodeId a, NodeId b) {
    Matrix out = moile::hstack(value(a), value(b));
    const int ac = value(a).cols;
    return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b, ac](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& av = t.value(a);
        const Matrix& bv = t.value(b);
        if (t.needs_grad(a)) {
            Matrix da(av.rows, av.cols);
            for (int i = 0; i < av.rows; ++i)
                for (int j = 0; j < av.cols; ++j) da.at(i, j) = g.at(i, j);
            t.accumulate(a, da);
        }
        if (t.needs_grad(b)) {
            Matrix db(bv.rows, bv.cols);
            for (int i = 0; i < bv.rows; ++i)
                for (int j = 0; j < bv.cols; ++j) db.at(i, j) = g.at(i, ac + j);
            t.accumulate(b, db);
        }
    });
}

Tape::NodeId Tape::vstack2(NodeId a, NodeId b) {
    Matrix out = moile::vstack(value(a), value(b));
    const int ar = value(a).rows;
    return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b, ar](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const Matrix& av = t.value(a);
        const Matrix& bv = t.value(b);
        if (t.needs_grad(a)) {
            Matrix da(av.rows, av.cols);
            for (int i = 0; i < av.rows; ++i)
                for (int j = 0; j < av.cols; ++j) da.at(i, j) = g.at(i, j);
            t.accumulate(a, da);
        }
        if (t.needs_grad(b)) {
            Matrix db(bv.rows, bv.cols);
            for (int i = 0; i < bv.rows; ++i)
                for (int j = 0; j < bv.cols; ++j) db.at(i, j) = g.at(ar + i, j);
            t.accumulate(b, db);
        }
    });
}

Tape::NodeId Tape::gather_cols(NodeId table, std::vector<int> indices) {
    const Matrix& tv = value(table);
    Matrix out(tv.rows, static_cast<int>(indices.size()));
    for (size_t j = 0; j < indices.size(); ++j) {
        MOILE_REQUIRE(indices[j] >= 0 && indices[j] < tv.cols, "gather_cols: index out of range");
        for (int i = 0; i < tv.rows; ++i) out.at(i, static_cast<int>(j)) = tv.at(i, indices[j]);
    }
    return push(std::move(out), needs_grad(table),
                [table, idx = std::move(indices)](Tape& t, NodeId self) {
                    const Matrix& g = t.grads_[self];
                    const Matrix& tv = t.value(table);
                    Matrix dt(tv.rows, tv.cols);
                    for (size_t j = 0; j < idx.size(); ++j)
                        for (int i = 0; i < tv.rows; ++i) dt.at(i, idx[j]) += g.at(i, static_cast<int>(j));
                    t.accumulate(table, dt);
                });
}

Tape::NodeId Tape::rowwise_scale(NodeId m, NodeId g) {
    const Matrix& mv = value(m);
    const Matrix& gv = value(g);
    MOILE_REQUIRE(gv.rows == 1 && gv.cols == mv.cols, "rowwise_scale: gate must be 1 x cols");
    Matrix out(mv.rows, mv.cols);
    for (int i = 0; i < mv.rows; ++i)
        for (int j = 0; j < mv.cols; ++j) out.at(i, j) = mv.at(i, j) * gv.at(0, j);
    return push(std::move(out), needs_grad(m) || needs_grad(g), [m, g](Tape& t, NodeId self) {
        const Matrix& go = t.grads_[self];
        const Matrix& mv = t.value(m);
        const Matrix& gv = t.value(g);
        if (t.needs_grad(m)) {
            Matrix dm(mv.rows, mv.cols);
            for (int i = 0; i < mv.rows; ++i)
                for (int j = 0; j < mv.cols; ++j) dm.at(i, j) = go.at(i, j) * gv.at(0, j);
            t.accumulate(m, dm);
        }
        if (t.needs_grad(g)) {
            Matrix dg(1, mv.cols);
            for (int j = 0; j < mv.cols; ++j) {
                double s = 0.0;
                for (int i = 0; i < mv.rows; ++i) s += go.at(i, j) * mv.at(i, j);
                dg.at(0, j) = s;
            }
            t.accumulate(g, dg);
        }
    });
}

Tape::NodeId Tape::scale_by(NodeId m, NodeId s) {
    const Matrix& sv = value(s);
    MOILE_REQUIRE(sv.rows == 1 && sv.cols == 1, "scale_by: scale must be 1x1");
    Matrix out = moile::scale(value(m), sv.at(0, 0));
    return push(std::move(out), needs_grad(m) || needs_grad(s), [m, s](Tape& t, NodeId self) {
        const Matrix& g = t.grads_[self];
        const double sval = t.value(s).at(0, 0);
        if (t.needs_grad(m)) t.accumulate(m, moile::scale(g, sval));
        if (t.needs_grad(s)) {
            Matrix ds(1, 1);
            const Matrix& mv = t.value(m);
            double acc = 0.0;
            for (size_t i = 0; i < mv.data.size(); ++i) acc += g.data[i] * mv.data[i];
            ds.at(0, 0) = acc;
            t.accumulate(s, ds);
        }
    });
}

Tape::NodeId Tape::sum_all(NodeId a) {
    const Matrix& x = value(a);
    Matrix out(1, 1);
    for (double v : x.data) out.at(0, 0) += v;
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        const double g = t.grads_[self].at(0, 0);
        const Matrix& x = t.value(a);
        Matrix da(x.rows, x.cols);
        for (double& v : da.data) v = g;
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::frob_sq(NodeId a) {
    const Matrix& x = value(a);
    Matrix out(1, 1);
    out.at(0, 0) = frob_norm_sq(x);
    return push(std::move(out), needs_grad(a), [a](Tape& t, NodeId self) {
        const double g = t.grads_[self].at(0, 0);
        const Matrix& x = t.value(a);
        Matrix da = moile::scale(x, 2.0 * g);
        t.accumulate(a, da);
    });
}

Tape::NodeId Tape::cross_entropy_cols(NodeId logits, std::vector<int> targets) {
    const Matrix& lv = value(logits);
    MOILE_REQUIRE(static_cast<int>(targets.size()) == lv.cols, "cross_entropy_cols: target count != columns");
    MOILE_REQUIRE(lv.cols >= 1, "cross_entropy_cols: no columns");
    Matrix probs(lv.rows, lv.cols);
    double loss = 0.0;
    for (int j = 0; j < lv.cols; ++j) {
        MOILE_REQUIRE(targets[j] >= 0 && targets[j] < lv.rows, "cross_entropy_cols: target out of range");
        double mx = lv.at(0, j);
        for (int i = 1; i < lv.rows; ++i) mx = std::max(mx, lv.at(i, j));
        double sum = 0.0;
        for (int i = 0; i < lv.rows; ++i) {
            probs.at(i, j) = std::exp(lv.at(i, j) - mx);
            sum += probs.at(i, j);
        }
        for (int i = 0; i < lv.rows; ++i) probs.at(i, j) /= sum;
        loss -= std::log(probs.at(targets[j], j));
    }
    Matrix out(1, 1);
    out.at(0, 0) = loss / lv.cols;
    return push(std::move(out), needs_grad(logits),
                [logits, tg = std::move(targets), probs = std::move(probs)](Tape& t, NodeId self) {
                    const double g = t.grads_[self].at(0, 0);
                    Matrix dl = probs;
                    const double inv = 1.0 / dl.cols;
                    for (int j = 0; j < dl.cols; ++j) dl.at(tg[j], j) -= 1.0;
                    for (double& v : dl.data) v *= g * inv;
                    t.accumulate(logits, dl);
                });
}

Tape::NodeId Tape::singular_drift(NodeId merged, const Matrix& b_stack, const Matrix& a_stack,
                                  double ref_total, int p, double gap_tol) {
    const Matrix& mv = value(merged);
    MOILE_REQUIRE(mv.rows == b_stack.rows && mv.cols == a_stack.cols,
                  "singular_drift: merged shape mismatch with factors");
    MOILE_REQUIRE(p >= 1, "singular_drift: p must be >= 1");
    SvdResult fac = svd_of_product(b_stack, a_stack);
    const int q = static_cast<int>(fac.s.size());
    MOILE_REQUIRE(p <= q, "singular_drift: p exceeds available components");
    double top_sq = 0.0;
    for (int i = 0; i < p; ++i) top_sq += fac.s[i] * fac.s[i];
    const double top = std::sqrt(top_sq);
    const double diff = top - ref_total;
    Matrix out(1, 1);
    out.at(0, 0) = std::abs(diff);

    // Subgradient policy: no gradient when the p-th gap is degenerate or the
    // drift is exactly at the kink.
    bool skip = (top <= 0.0) || (diff == 0.0);
    if (!skip && p < q && fac.s[p - 1] - fac.s[p] < gap_tol) skip = true;

    Matrix coef;
    if (!skip) {
        const double sign = diff > 0.0 ? 1.0 : -1.0;
        coef = Matrix(mv.rows, mv.cols);
        for (int c = 0; c < p; ++c) {
            const double w = sign * fac.s[c] / top;
            if (w == 0.0) continue;
            for (int i = 0; i < mv.rows; ++i) {
                const double uw = fac.u.at(i, c) * w;
                for (int j = 0; j < mv.cols; ++j) coef.at(i, j) += uw * fac.v.at(j, c);
            }
        }
    }
    return push(std::move(out), needs_grad(merged),
                [merged, skip, coef = std::move(coef)](Tape& t, NodeId self) {
                    if (skip) return;
                    const double g = t.grads_[self].at(0, 0);
                    t.accumulate(merged, moile::scale(coef, g));
                });
}

} // namespace moile
