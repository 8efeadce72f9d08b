#pragma once

#include "orthus/autoencoder.hpp"
#include "orthus/mixed_sequence.hpp"

namespace orthus {

struct BackboneConfig {
    Index layers = 2;
    Index dim = 64;  // d_e
    Index heads = 4;
    Index mlp_mult = 4;
    Index max_len = 64;
    Index vocab = vocab::kSize;
    double rope_base = 10000.0;
    double init_std = 0.02;
};

template <class S>
void init_backbone_params(ParamStore<S>& store, const BackboneConfig& cfg, Rng& rng) {
    double std = cfg.init_std;
    for (Index l = 0; l < cfg.layers; ++l) {
        std::string p = "bb.l" + std::to_string(l) + ".";
        store.add(p + "ln1.g", MatrixX<S>::Ones(1, cfg.dim));
        store.add(p + "ln1.b", MatrixX<S>::Zero(1, cfg.dim));
        store.add_gaussian(p + "attn.Wq", cfg.dim, cfg.dim, rng, std);
        store.add_gaussian(p + "attn.Wk", cfg.dim, cfg.dim, rng, std);
        store.add_gaussian(p + "attn.Wv", cfg.dim, cfg.dim, rng, std);
        store.add_gaussian(p + "attn.Wo", cfg.dim, cfg.dim, rng, std);
        store.add(p + "ln2.g", MatrixX<S>::Ones(1, cfg.dim));
        store.add(p + "ln2.b", MatrixX<S>::Zero(1, cfg.dim));
        store.add_gaussian(p + "mlp.W1", cfg.dim, cfg.dim * cfg.mlp_mult, rng, std);
        store.add_gaussian(p + "mlp.W2", cfg.dim * cfg.mlp_mult, cfg.dim, rng, std);
    }
    store.add(std::string("bb.final.g"), MatrixX<S>::Ones(1, cfg.dim));
    store.add(std::string("bb.final.b"), MatrixX<S>::Zero(1, cfg.dim));
}

namespace detail {

// Rotary tables with the duplicated-halves layout: column k and k + d/2 share
// the frequency base^(-2k/d).
template <class S>
std::pair<MatrixX<S>, MatrixX<S>> rope_tables(Index len, Index head_dim, double base) {
    MatrixX<S> cos_t(len, head_dim), sin_t(len, head_dim);
    Index half = head_dim / 2;
    for (Index pos = 0; pos < len; ++pos)
        for (Index k = 0; k < half; ++k) {
            double angle = double(pos) * std::pow(base, -2.0 * double(k) / double(head_dim));
            cos_t(pos, k) = cos_t(pos, k + half) = S(std::cos(angle));
            sin_t(pos, k) = sin_t(pos, k + half) = S(std::sin(angle));
        }
    return {cos_t, sin_t};
}

// x*cos + rotate_half(x)*sin, where rotate_half swaps the two column halves
// and negates the upper one.
template <class S>
NodeId apply_rope(Graph<S>& g, NodeId x, NodeId cos_t, NodeId sin_t, Index head_dim,
                  const std::string& label) {
    Index half = head_dim / 2;
    NodeId hi = g.slice(x, 1, half, half, label + ".hi");
    NodeId lo = g.slice(x, 1, 0, half, label + ".lo");
    NodeId rotated = g.concat({g.scale(hi, S(-1)), lo}, 1, label + ".rot");
    return g.add(g.mul(x, cos_t), g.mul(rotated, sin_t), label);
}

}  // namespace detail

// Pre-norm causal transformer over already-embedded rows: rotary positions,
// no biases, GELU MLP, final layer norm. Returns the per-position states.
template <class S>
NodeId build_transformer(Graph<S>& g, NodeId x, Index len, const BackboneConfig& cfg,
                         const ParamFn<S>& param) {
    if (len > cfg.max_len)
        fail("sequence length ", len, " exceeds the backbone maximum ", cfg.max_len);
    Index d = cfg.dim, H = cfg.heads, dh = d / H;
    S inv_sqrt = S(1.0 / std::sqrt(double(dh)));

    auto [cos_m, sin_m] = detail::rope_tables<S>(len, dh, cfg.rope_base);
    NodeId cos_t = g.constant(cos_m, "rope.cos");
    NodeId sin_t = g.constant(sin_m, "rope.sin");

    // additive causal mask: 0 on and below the diagonal, -1e9 above
    MatrixX<S> mask = MatrixX<S>::Zero(len, len);
    for (Index i = 0; i < len; ++i)
        for (Index j = i + 1; j < len; ++j) mask(i, j) = S(-1e9);
    NodeId mask_n = g.constant(mask, "causal.mask");

    for (Index l = 0; l < cfg.layers; ++l) {
        std::string p = "bb.l" + std::to_string(l) + ".";
        NodeId h = g.layer_norm(x, param(g, p + "ln1.g", 1, d), param(g, p + "ln1.b", 1, d), S(1e-5),
                                p + "ln1");
        NodeId q = g.matmul(h, param(g, p + "attn.Wq", d, d), false, false, p + "q");
        NodeId k = g.matmul(h, param(g, p + "attn.Wk", d, d), false, false, p + "k");
        NodeId v = g.matmul(h, param(g, p + "attn.Wv", d, d), false, false, p + "v");
        std::vector<NodeId> ctx;
        for (Index hd = 0; hd < H; ++hd) {
            std::string hp = p + "h" + std::to_string(hd);
            NodeId qh = detail::apply_rope(g, g.slice(q, 1, hd * dh, dh), cos_t, sin_t, dh, hp + ".qr");
            NodeId kh = detail::apply_rope(g, g.slice(k, 1, hd * dh, dh), cos_t, sin_t, dh, hp + ".kr");
            NodeId vh = g.slice(v, 1, hd * dh, dh);
            NodeId scores = g.add(g.scale(g.matmul(qh, kh, false, true), inv_sqrt), mask_n, hp + ".scores");
            NodeId att = g.row_softmax(scores, hp + ".att");
            ctx.push_back(g.matmul(att, vh, false, false, hp + ".ctx"));
        }
        NodeId merged = g.concat(ctx, 1, p + "ctx");
        x = g.add(x, g.matmul(merged, param(g, p + "attn.Wo", d, d)), p + "attn.out");
        NodeId h2 = g.layer_norm(x, param(g, p + "ln2.g", 1, d), param(g, p + "ln2.b", 1, d), S(1e-5),
                                 p + "ln2");
        NodeId up = g.gelu(g.matmul(h2, param(g, p + "mlp.W1", d, d * cfg.mlp_mult)), p + "mlp.act");
        x = g.add(x, g.matmul(up, param(g, p + "mlp.W2", d * cfg.mlp_mult, d)), p + "mlp.out");
    }
    return g.layer_norm(x, param(g, "bb.final.g", 1, d), param(g, "bb.final.b", 1, d), S(1e-5),
                        "bb.final");
}

}  // namespace orthus
