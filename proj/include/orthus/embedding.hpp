#pragma once

#include "orthus/graph.hpp"

namespace orthus {

// Nearest code by squared Euclidean distance; ties break to the lowest index.
template <class S>
Index quantize_hard(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>>& v,
                    const MatrixX<S>& codes) {
    if (codes.rows() == 0) fail("empty codebook");
    if (codes.cols() != v.cols())
        throw ShapeError("quantize: feature dim " + std::to_string(v.cols()) + " vs codebook dim " +
                         std::to_string(codes.cols()));
    Index best = 0;
    S best_d = (codes.row(0) - v).squaredNorm();
    for (Index j = 1; j < codes.rows(); ++j) {
        S d = (codes.row(j) - v).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

template <class S>
std::vector<Index> quantize_rows(const MatrixX<S>& v, const MatrixX<S>& codes) {
    std::vector<Index> out(size_t(v.rows()));
    for (Index i = 0; i < v.rows(); ++i) out[size_t(i)] = quantize_hard<S>(v.row(i), codes);
    return out;
}

// Discrete path: row lookup into the embedding table. The input features only
// enter through the host-side argmin, so no gradient ever reaches them.
template <class S>
NodeId embed_hard(Graph<S>& g, NodeId weights, std::vector<Index> indices, const std::string& label = "") {
    return g.gather(weights, std::move(indices), label);
}

// Soft path: rows of softmax(-dist(v, codes)/tau) combine the embedding table.
// Differentiable in v, the codes and the table; tau -> 0 recovers embed_hard.
template <class S>
NodeId embed_soft(Graph<S>& g, NodeId v, NodeId codes, NodeId weights, S tau,
                  const std::string& label = "") {
    if (!(tau > S(0))) fail("softmax embedding temperature must be positive, got ", tau);
    // squared distances via ||v||^2 - 2 v.c + ||c||^2, assembled with broadcasts
    NodeId v_sq = g.row_sum(g.mul(v, v), label + ".vsq");              // P x 1
    NodeId c_sq = g.row_sum(g.mul(codes, codes), label + ".csq");      // K x 1
    NodeId cross = g.matmul(v, codes, false, true, label + ".cross");  // P x K
    NodeId dist = g.add(g.add(g.scale(cross, S(-2)), v_sq), g.matmul(g.constant(MatrixX<S>::Ones(1, 1)),
                                                                     c_sq, false, true));
    NodeId w = g.row_softmax(g.scale(dist, S(-1) / tau), label + ".softmax");
    return g.matmul(w, weights, false, false, label);
}

// Ablation path: direct linear map of the continuous features.
template <class S>
NodeId embed_linear(Graph<S>& g, NodeId v, NodeId proj, const std::string& label = "") {
    return g.matmul(v, proj, false, false, label);
}

// Value-mode conveniences (run a throwaway graph; same kernels as training).
template <class S>
MatrixX<S> embed_soft_value(const MatrixX<S>& v, const MatrixX<S>& codes, const MatrixX<S>& weights,
                            S tau) {
    Graph<S> g;
    NodeId out = embed_soft<S>(g, g.constant(v), g.constant(codes), g.constant(weights), tau);
    g.forward();
    return g.value(out);
}

template <class S>
MatrixX<S> embed_hard_value(const MatrixX<S>& v, const MatrixX<S>& codes, const MatrixX<S>& weights) {
    Graph<S> g;
    NodeId out = embed_hard<S>(g, g.constant(weights), quantize_rows(v, codes));
    g.forward();
    return g.value(out);
}

}  // namespace orthus
