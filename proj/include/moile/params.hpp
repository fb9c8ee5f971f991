// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moile/matrix.hpp"
#include "moile/tape.hpp"

namespace moile {

// A trainable matrix with its Adam state. Frozen weights are plain Matrix
// members elsewhere; if it is a Param, it trains.
struct Param {
    std::string name;
    Matrix value;
    Matrix m, v;
    int steps = 0;

    Param() = default;
    Param(std::string n, Matrix val) : name(std::move(n)), value(std::move(val)) { zero_moments(); }

    void zero_moments() {
        m = Matrix(value.rows, value.cols);
        v = Matrix(value.rows, value.cols);
        steps = 0;
    }
    void reset(Matrix new_value) {
        value = std::move(new_value);
        zero_moments();
    }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void adam_step(Param& p, const Matrix& grad, const AdamConfig& cfg) {
    MOILE_REQUIRE(grad.same_shape(p.value), "adam_step: gradient shape mismatch");
    ++p.steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, p.steps);
    const double bc2 = 1.0 - std::pow(cfg.beta2, p.steps);
    for (size_t i = 0; i < p.value.data.size(); ++i) {
        const double g = grad.data[i];
        p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
        p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
        const double mh = p.m.data[i] / bc1;
        const double vh = p.v.data[i] / bc2;
        p.value.data[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

// One training step's tape plus the set of parameter leaves created on it.
// Every Param registered here receives a gradient and an optimizer update;
// everything entering through frozen_leaf stays untouched by construction.
class StepContext {
public:
    Tape tape;

    Tape::NodeId param_leaf(Param& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        const Tape::NodeId id = tape.leaf(p.value, true);
        param_ids_.emplace(&p, id);
        ordered_.emplace_back(&p, id);
        return id;
    }

    Tape::NodeId frozen_leaf(const Matrix& m) {
        auto it = const_ids_.find(&m);
        if (it != const_ids_.end()) return it->second;
        const Tape::NodeId id = tape.leaf(m, false);
        const_ids_.emplace(&m, id);
        return id;
    }

    const std::vector<std::pair<Param*, Tape::NodeId>>& params() const { return ordered_; }

private:
    std::unordered_map<Param*, Tape::NodeId> param_ids_;
    std::unordered_map<const Matrix*, Tape::NodeId> const_ids_;
    std::vector<std::pair<Param*, Tape::NodeId>> ordered_;
};

} // namespace moile
