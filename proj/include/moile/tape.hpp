// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "moile/matrix.hpp"
#include "moile/svd.hpp"

namespace moile {

// Define-by-run reverse-mode autodiff over Matrix values. A tape is rebuilt
// per training step and confined to one thread. Node ids are append-ordered,
// so iterating ids in reverse is a reverse topological order.
class Tape {
public:
    using NodeId = int;

    NodeId leaf(Matrix value, bool requires_grad = false);
    NodeId constant(Matrix value) { return leaf(std::move(value), false); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId hadamard(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId relu(NodeId a);
    NodeId rmsnorm_cols(NodeId a);     // per-column x / sqrt(mean(x^2) + eps)
    NodeId colwise_softmax(NodeId a);  // softmax over rows, per column
    NodeId slice_rows(NodeId a, int r0, int r1);
    NodeId slice_cols(NodeId a, int c0, int c1);
    NodeId hstack2(NodeId a, NodeId b);
    NodeId vstack2(NodeId a, NodeId b);
    NodeId gather_cols(NodeId table, std::vector<int> indices);
    NodeId rowwise_scale(NodeId m, NodeId g); // g is 1 x cols(m)
    NodeId scale_by(NodeId m, NodeId s);      // s is 1 x 1
    NodeId sum_all(NodeId a);                 // 1 x 1
    NodeId frob_sq(NodeId a);                 // 1 x 1, sum of squares

    // Mean cross-entropy of column logits against integer targets.
    NodeId cross_entropy_cols(NodeId logits, std::vector<int> targets);

    // | sqrt(sum of top-p squared singular values of merged) - ref_total |
    // where merged must hold the value b_stack * a_stack. The gradient uses
    // the analytic singular-value derivative u_i v_i^T and is skipped (zero)
    // when the p-th spectral gap is below gap_tol.
    NodeId singular_drift(NodeId merged, const Matrix& b_stack, const Matrix& a_stack,
                          double ref_total, int p, double gap_tol);

    const Matrix& value(NodeId id) const { return nodes_[id].value; }
    bool needs_grad(NodeId id) const { return nodes_[id].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar loss node. Gradient accumulators are
    // zero-initialized on every invocation.
    void backward(NodeId loss);

    // Gradient of the last backward() w.r.t. a node (zeros if untouched).
    Matrix grad(NodeId id) const;

    void clear();

private:
    struct Node {
        Matrix value;
        bool requires_grad = false;
        std::function<void(Tape&, NodeId)> backprop; // reads grad of its own id
    };

    NodeId push(Matrix value, bool requires_grad, std::function<void(Tape&, NodeId)> backprop);
    void accumulate(NodeId id, const Matrix& g);

    std::deque<Node> nodes_; // deque: references to node values stay valid across pushes
    std::vector<Matrix> grads_;
    std::vector<char> touched_;
};

} // namespace moile
