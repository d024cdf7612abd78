#pragma once

// Shared helpers for the test suites: random leaf construction and a central
// finite-difference gradient checker running at 64-bit precision.

#include <functional>
#include <vector>

#include "swinseg/ops.hpp"
#include "swinseg/rng.hpp"

namespace testutil {

using swinseg::Graph;
using swinseg::Shape;
using swinseg::Tensor;

inline Tensor<double> rand_leaf(swinseg::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
    auto t = swinseg::make_tensor<double>(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Random magnitudes in [0.25, 1] with random signs; keeps values away from
// the kink of abs() so finite differences stay valid.
inline Tensor<double> rand_leaf_signed(swinseg::Rng& rng, Shape shape) {
    auto t = swinseg::make_tensor<double>(std::move(shape), true);
    for (auto& v : t->data) v = rng.uniform(0.25, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    return t;
}

// Scalarizes an arbitrary tensor with fixed positive weights so that every
// element influences the loss with a distinct coefficient.
inline Tensor<double> weighted_sum(Graph<double>& g, const Tensor<double>& y, uint64_t salt = 0) {
    swinseg::Rng wr(swinseg::Rng::mix(0x5EED5EED, salt));
    auto w = swinseg::make_tensor<double>(y->shape);
    for (auto& v : w->data) v = wr.uniform(0.5, 1.5);
    return swinseg::sum_all(g, swinseg::mul(g, y, w));
}

inline double rel_err(double a, double n) {
    return std::fabs(a - n) / std::max(std::fabs(a) + std::fabs(n), 1e-3);
}

// Runs f once with recording to get analytic gradients, then perturbs every
// element of every leaf by +/-h and compares. Returns the max relative error.
inline double gradcheck(const std::function<Tensor<double>(Graph<double>&)>& f,
                        const std::vector<Tensor<double>>& leaves, double h = 1e-3) {
    for (const auto& leaf : leaves) {
        leaf->grad.clear();
        leaf->requires_grad = true;
    }
    Graph<double> g;
    auto loss = f(g);
    g.backward(loss);

    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves) {
        leaf->ensure_grad();
        analytic.push_back(leaf->grad);
    }

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (int64_t i = 0; i < leaf->numel(); ++i) {
            const double saved = leaf->data[i];
            leaf->data[i] = saved + h;
            Graph<double> gp(false);
            const double lp = f(gp)->data[0];
            leaf->data[i] = saved - h;
            Graph<double> gm(false);
            const double lm = f(gm)->data[0];
            leaf->data[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic[li][i], numeric));
        }
    }
    return worst;
}

}  // namespace testutil
