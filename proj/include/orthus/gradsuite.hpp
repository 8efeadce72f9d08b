#pragma once

// Randomised finite-difference verification of every differentiable kernel in
// the tape, plus the composite sequence loss, over freshly drawn shapes each
// iteration. Non-scalar kernel outputs are reduced with a random-weighted sum
// so every element receives a distinct upstream gradient.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "orthus/gradcheck.hpp"
#include "orthus/graph.hpp"
#include "orthus/model.hpp"
#include "orthus/rng.hpp"

namespace orthus {

struct GradSuiteRow {
    std::string kernel;
    double max_rel_err = 0;
};

struct GradSuiteReport {
    std::vector<GradSuiteRow> rows;
    double worst = 0;
    double wall_seconds = 0;

    bool all_below(double tol) const {
        for (const auto& r : rows)
            if (!(r.max_rel_err < tol)) return false;
        return !rows.empty();
    }
};

namespace gradsuite_detail {

inline MatrixX<double> draw(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    MatrixX<double> m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = rng.gaussian(Stream::Misc) * scale;
    return m;
}

inline Index dim(Rng& rng, Index lo = 1, Index hi = 16) {
    return lo + Index(rng.below(Stream::Misc, uint64_t(hi - lo + 1)));
}

// Reduce a kernel output to a scalar with random weights; scalars pass through.
inline NodeId weighted_sum(Graph<double>& g, NodeId y, Rng& rng) {
    const auto& n = g.at(y);
    if (n.rows == 1 && n.cols == 1) return y;
    return g.sum(g.mul(y, g.constant(draw(rng, n.rows, n.cols))));
}

struct Case {
    Graph<double> g;
    Graph<double>::Bindings bind;
    ParamStore<double> store;

    NodeId in(const std::string& name, MatrixX<double> v) {
        NodeId id = g.input(name, v.rows(), v.cols(), /*requires_grad=*/true);
        bind.emplace(name, std::move(v));
        return id;
    }
    NodeId par(const std::string& name, MatrixX<double> v) {
        NodeId id = g.param(name, v.rows(), v.cols());
        store.add(name, std::move(v));
        return id;
    }
};

// Broadcast partner shapes for add/mul: dense, row, column, scalar.
inline std::pair<Index, Index> broadcast_shape(int mode, Index rows, Index cols) {
    switch (mode & 3) {
        case 0: return {rows, cols};
        case 1: return {1, cols};
        case 2: return {rows, 1};
        default: return {1, 1};
    }
}

template <class Build>
GradSuiteRow check_kernel(const std::string& name, int shapes, uint64_t seed, Build&& build) {
    GradSuiteRow row{name, 0.0};
    for (int iter = 0; iter < shapes; ++iter) {
        uint64_t tag = fnv1a({reinterpret_cast<const unsigned char*>(name.data()), name.size()});
        Rng rng(seed ^ (tag + 0x9e3779b97f4a7c15ull * uint64_t(iter + 1)));
        Case c;
        NodeId y = build(c, rng, iter);
        NodeId loss = weighted_sum(c.g, y, rng);
        GradCheckReport rep = grad_check(c.g, c.bind, &c.store, loss);
        row.max_rel_err = std::max(row.max_rel_err, rep.max_rel_err);
    }
    return row;
}

// The composite case: a full mixed-sequence loss on a miniature model, checked
// against finite differences over every trainable parameter and patch input.
inline GradSuiteRow check_sequence_loss(int shapes, uint64_t seed) {
    GradSuiteRow row{"sequence_loss", 0.0};
    Config cfg;
    cfg.ae_latent_dim = 4;
    cfg.ae_codebook_size = 8;
    cfg.model_layers = 1;
    cfg.model_dim = 8;
    cfg.model_heads = 2;
    cfg.model_mlp_mult = 2;
    cfg.model_max_len = 40;
    cfg.diff_timesteps = 50;
    cfg.diff_sample_steps = 10;
    cfg.diff_head_width = 8;
    cfg.diff_head_blocks = 1;

    for (int iter = 0; iter < shapes; ++iter) {
        Rng rng(seed ^ (0xabc0ffee + 0x9e3779b97f4a7c15ull * uint64_t(iter + 1)));
        AutoencoderConfig acfg;
        acfg.latent_dim = cfg.ae_latent_dim;
        acfg.codebook = cfg.ae_codebook_size;
        ParamStore<double> ae;
        init_autoencoder_params(ae, acfg, rng);
        ae.at("ae.vq.codes") = draw(rng, cfg.ae_codebook_size, cfg.ae_latent_dim, 0.5);

        // alternate the variants so soft and hard embedding, and both heads,
        // all face the finite-difference oracle
        EmbedKind ek = (iter % 3 == 0)   ? EmbedKind::Softmax
                       : (iter % 3 == 1) ? EmbedKind::Argmin
                                         : EmbedKind::Linear;
        HeadKind hk = (iter % 2 == 0) ? HeadKind::Diffusion : HeadKind::Mse;
        OrthusModel<double> m = make_model(cfg, ek, hk, ae, rng);
        // zero-initialised output layers would zero every upstream gradient
        for (auto& e : m.store.entries())
            if (e.value.isZero(0.0)) e.value = draw(rng, e.value.rows(), e.value.cols(), 0.05);

        MixedSequence<double> seq;
        Index caption = dim(rng, 1, 4);
        std::vector<int> tokens;
        for (Index t = 0; t < caption; ++t)
            tokens.push_back(int(vocab::kEoi) + 1 + int(rng.below(Stream::Misc, 8)));
        tokens.push_back(vocab::kSep);
        seq.append_text(tokens);
        seq.append_image(draw(rng, dim(rng, 1, 3), cfg.ae_latent_dim, 0.4));
        seq.append_text({vocab::kEos});

        Graph<double> g;
        auto loss = build_sequence_loss(g, m, seq, Objective::Unified, trainable_params(m.store), rng);
        GradCheckReport rep = grad_check(g, loss.embedded.bindings, &m.store, loss.total);
        row.max_rel_err = std::max(row.max_rel_err, rep.max_rel_err);
    }
    return row;
}

}  // namespace gradsuite_detail

// Runs every kernel (and the composite loss) through `shapes` freshly drawn
// configurations each and reports the per-kernel worst relative error.
inline GradSuiteReport run_grad_suite(int shapes = 20, uint64_t seed = 42) {
    namespace d = gradsuite_detail;
    auto t0 = std::chrono::steady_clock::now();
    GradSuiteReport rep;

    rep.rows.push_back(d::check_kernel("matmul", shapes, seed, [](d::Case& c, Rng& rng, int iter) {
        bool ta = iter & 1, tb = (iter >> 1) & 1;
        Index m = d::dim(rng), k = d::dim(rng), n = d::dim(rng);
        NodeId a = c.in("a", d::draw(rng, ta ? k : m, ta ? m : k, 0.7));
        NodeId b = c.par("B", d::draw(rng, tb ? n : k, tb ? k : n, 0.7));
        return c.g.matmul(a, b, ta, tb);
    }));

    rep.rows.push_back(d::check_kernel("add", shapes, seed, [](d::Case& c, Rng& rng, int iter) {
        Index m = d::dim(rng, 2), n = d::dim(rng, 2);
        auto [br, bc] = d::broadcast_shape(iter, m, n);
        NodeId x = c.in("x", d::draw(rng, m, n));
        NodeId b = c.par("B", d::draw(rng, br, bc));
        return c.g.add(x, b);
    }));

    rep.rows.push_back(d::check_kernel("mul", shapes, seed, [](d::Case& c, Rng& rng, int iter) {
        Index m = d::dim(rng, 2), n = d::dim(rng, 2);
        auto [br, bc] = d::broadcast_shape(iter, m, n);
        NodeId x = c.in("x", d::draw(rng, m, n));
        NodeId b = c.par("B", d::draw(rng, br, bc));
        return c.g.mul(x, b);
    }));

    rep.rows.push_back(d::check_kernel("scale", shapes, seed, [](d::Case& c, Rng& rng, int) {
        NodeId x = c.in("x", d::draw(rng, d::dim(rng), d::dim(rng)));
        return c.g.scale(x, rng.gaussian(Stream::Misc) * 1.5);
    }));

    rep.rows.push_back(d::check_kernel("row_softmax", shapes, seed, [](d::Case& c, Rng& rng, int) {
        NodeId x = c.in("x", d::draw(rng, d::dim(rng), d::dim(rng, 2), 1.5));
        return c.g.row_softmax(x);
    }));

    rep.rows.push_back(d::check_kernel("layer_norm", shapes, seed, [](d::Case& c, Rng& rng, int) {
        Index m = d::dim(rng), n = d::dim(rng, 4);
        NodeId x = c.in("x", d::draw(rng, m, n));
        MatrixX<double> gm = d::draw(rng, 1, n, 0.2);
        gm.array() += 1.0;
        NodeId gamma = c.par("gamma", std::move(gm));
        NodeId beta = c.par("beta", d::draw(rng, 1, n, 0.2));
        return c.g.layer_norm(x, gamma, beta);
    }));

    rep.rows.push_back(d::check_kernel("silu", shapes, seed, [](d::Case& c, Rng& rng, int) {
        return c.g.silu(c.in("x", d::draw(rng, d::dim(rng), d::dim(rng), 1.2)));
    }));

    rep.rows.push_back(d::check_kernel("gelu", shapes, seed, [](d::Case& c, Rng& rng, int) {
        return c.g.gelu(c.in("x", d::draw(rng, d::dim(rng), d::dim(rng), 1.2)));
    }));

    rep.rows.push_back(d::check_kernel("gather", shapes, seed, [](d::Case& c, Rng& rng, int) {
        Index t = d::dim(rng, 2), k = d::dim(rng);
        NodeId table = c.par("T", d::draw(rng, t, k));
        Index rows = d::dim(rng, 2);
        std::vector<Index> idx(static_cast<size_t>(rows));
        for (auto& v : idx) v = Index(rng.below(Stream::Misc, uint64_t(t)));
        idx.back() = idx.front();  // guarantee duplicate-row accumulation
        return c.g.gather(table, std::move(idx));
    }));

    rep.rows.push_back(d::check_kernel("concat", shapes, seed, [](d::Case& c, Rng& rng, int iter) {
        int axis = iter % 2;
        Index shared = d::dim(rng);
        int parts = 2 + int(rng.below(Stream::Misc, 3));
        std::vector<NodeId> ids;
        for (int p = 0; p < parts; ++p) {
            Index var = d::dim(rng, 1, 6);
            Index r = axis == 0 ? var : shared;
            Index cc = axis == 0 ? shared : var;
            ids.push_back(c.in("x" + std::to_string(p), d::draw(rng, r, cc)));
        }
        return c.g.concat(ids, axis);
    }));

    rep.rows.push_back(d::check_kernel("slice", shapes, seed, [](d::Case& c, Rng& rng, int iter) {
        int axis = iter % 2;
        Index m = d::dim(rng, 2), n = d::dim(rng, 2);
        NodeId x = c.in("x", d::draw(rng, m, n));
        Index extent = axis == 0 ? m : n;
        Index len = 1 + Index(rng.below(Stream::Misc, uint64_t(extent)));
        Index start = Index(rng.below(Stream::Misc, uint64_t(extent - len + 1)));
        return c.g.slice(x, axis, start, len);
    }));

    rep.rows.push_back(d::check_kernel("sum", shapes, seed, [](d::Case& c, Rng& rng, int) {
        return c.g.sum(c.in("x", d::draw(rng, d::dim(rng), d::dim(rng))));
    }));

    rep.rows.push_back(d::check_kernel("row_sum", shapes, seed, [](d::Case& c, Rng& rng, int) {
        return c.g.row_sum(c.in("x", d::draw(rng, d::dim(rng), d::dim(rng))));
    }));

    rep.rows.push_back(d::check_kernel("mean", shapes, seed, [](d::Case& c, Rng& rng, int) {
        return c.g.mean(c.in("x", d::draw(rng, d::dim(rng), d::dim(rng))));
    }));

    rep.rows.push_back(d::check_kernel("cross_entropy", shapes, seed, [](d::Case& c, Rng& rng, int) {
        Index m = d::dim(rng), v = d::dim(rng, 2);
        NodeId logits = c.in("x", d::draw(rng, m, v, 1.2));
        std::vector<Index> targets(static_cast<size_t>(m));
        for (auto& t : targets) t = Index(rng.below(Stream::Misc, uint64_t(v)));
        return c.g.cross_entropy(logits, std::move(targets));
    }));

    rep.rows.push_back(d::check_kernel("mse", shapes, seed, [](d::Case& c, Rng& rng, int) {
        Index m = d::dim(rng), n = d::dim(rng);
        NodeId pred = c.in("x", d::draw(rng, m, n));
        return c.g.mse(pred, c.g.constant(d::draw(rng, m, n)));
    }));

    rep.rows.push_back(d::check_sequence_loss(shapes, seed));

    for (const auto& r : rep.rows) rep.worst = std::max(rep.worst, r.max_rel_err);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// Plain-text table: kernel name, worst relative error, ok/FAIL against `tol`.
inline std::string render_grad_table(const GradSuiteReport& rep, double tol = 1e-4) {
    std::string out = "kernel          max_rel_err  status\n";
    char line[96];
    for (const auto& r : rep.rows) {
        std::snprintf(line, sizeof line, "%-15s %11.3e  %s\n", r.kernel.c_str(), r.max_rel_err,
                      r.max_rel_err < tol ? "ok" : "FAIL");
        out += line;
    }
    std::snprintf(line, sizeof line, "worst %.3e over %zu kernels in %.2fs\n", rep.worst,
                  rep.rows.size(), rep.wall_seconds);
    out += line;
    return out;
}

}  // namespace orthus
