#pragma once

#include "orthus/graph.hpp"

namespace orthus {

// Central finite differences against the tape's analytic gradients, run in
// double precision. Returns the worst relative error over all checked leaves;
// each element uses |a - n| / max(|a|, |n|, 1).
struct GradCheckReport {
    double max_rel_err = 0;
    std::string worst;  // leaf where the max occurred
};

template <class EvalLoss>
void finite_diff_into(MatrixX<double>& target, EvalLoss&& loss_value, double h, MatrixX<double>& num) {
    num.resize(target.rows(), target.cols());
    for (Index i = 0; i < target.rows(); ++i)
        for (Index j = 0; j < target.cols(); ++j) {
            double keep = target(i, j);
            target(i, j) = keep + h;
            double up = loss_value();
            target(i, j) = keep - h;
            double down = loss_value();
            target(i, j) = keep;
            num(i, j) = (up - down) / (2 * h);
        }
}

inline double rel_err(const MatrixX<double>& a, const MatrixX<double>& n) {
    double worst = 0;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) {
            double d = std::abs(a(i, j) - n(i, j));
            double scale = std::max({std::abs(a(i, j)), std::abs(n(i, j)), 1.0});
            worst = std::max(worst, d / scale);
        }
    return worst;
}

// Checks d(loss)/d(leaf) for every trainable store entry and every bound input
// declared with requires_grad. Bindings and store are perturbed in place.
inline GradCheckReport grad_check(Graph<double>& g, Graph<double>::Bindings& bindings,
                                  ParamStore<double>* store, NodeId loss, double h = 1e-5) {
    auto loss_value = [&] {
        g.forward(bindings, store);
        return g.value(loss)(0, 0);
    };
    loss_value();
    g.backward(loss);

    // collect analytic grads keyed by leaf name (inputs and params are unique by name)
    std::unordered_map<std::string, MatrixX<double>> analytic;
    for (NodeId id = 0; id < NodeId(g.size()); ++id) {
        const auto& n = g.at(id);
        if ((n.op == Op::Input || n.op == Op::Param) && n.requires_grad) {
            const MatrixX<double>* gr = g.grad(id);
            analytic[n.name] = gr ? *gr : MatrixX<double>::Zero(n.rows, n.cols);
        }
    }

    GradCheckReport report;
    MatrixX<double> num;
    auto check_leaf = [&](const std::string& name, MatrixX<double>& storage) {
        auto it = analytic.find(name);
        if (it == analytic.end()) return;
        finite_diff_into(storage, loss_value, h, num);
        double e = rel_err(it->second, num);
        if (e >= report.max_rel_err) {
            report.max_rel_err = e;
            report.worst = name;
        }
    };
    for (auto& [name, m] : bindings) check_leaf(name, m);
    if (store)
        for (auto& e : store->entries()) check_leaf(e.name, e.value);
    return report;
}

}  // namespace orthus
