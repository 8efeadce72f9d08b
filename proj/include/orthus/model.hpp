#pragma once

#include "orthus/backbone.hpp"
#include "orthus/config.hpp"
#include "orthus/heads.hpp"

namespace orthus {

enum class EmbedKind { Softmax = 0, Argmin = 1, Linear = 2 };
enum class HeadKind { Diffusion = 0, Mse = 1 };
enum class Objective { Unified = 0, UnderstandingOnly = 1, GenerationOnly = 2 };

inline const char* embed_kind_name(EmbedKind k) {
    switch (k) {
        case EmbedKind::Softmax: return "softmax";
        case EmbedKind::Argmin: return "argmin";
        case EmbedKind::Linear: return "linear";
    }
    return "?";
}
inline const char* head_kind_name(HeadKind k) { return k == HeadKind::Diffusion ? "diffusion" : "mse"; }
inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::Unified: return "unified";
        case Objective::UnderstandingOnly: return "understanding-only";
        case Objective::GenerationOnly: return "generation-only";
    }
    return "?";
}

// Config carries the variant selectors as validated integers.
inline EmbedKind embed_kind_of(const Config& cfg) { return EmbedKind(cfg.model_embed_kind); }
inline HeadKind head_kind_of(const Config& cfg) { return HeadKind(cfg.model_head_kind); }
inline Objective objective_of(const Config& cfg) { return Objective(cfg.train_objective); }

// One language-plus-vision model: a shared causal backbone whose states feed
// a linear token head and a per-patch noise-prediction head; patch features
// enter through a quantiser-derived embedding.
template <class S>
struct OrthusModel {
    Config cfg;
    EmbedKind embed_kind = EmbedKind::Softmax;
    HeadKind head_kind = HeadKind::Diffusion;

    BackboneConfig bb;
    DiffusionHeadConfig head;
    DiffusionSchedule sched;
    MatrixX<S> t_table;
    ParamStore<S> store;

    Index latent_dim() const { return head.latent_dim; }
};

template <class S>
BackboneConfig backbone_config(const Config& cfg) {
    BackboneConfig b;
    b.layers = cfg.model_layers;
    b.dim = cfg.model_dim;
    b.heads = cfg.model_heads;
    b.mlp_mult = cfg.model_mlp_mult;
    b.max_len = cfg.model_max_len;
    b.rope_base = cfg.model_rope_base;
    b.init_std = cfg.model_init_std;
    return b;
}

// Derived pieces shared by every construction path: shapes, schedule and the
// timestep table follow from the config alone.
template <class S>
OrthusModel<S> model_shell(const Config& cfg, EmbedKind embed_kind, HeadKind head_kind) {
    cfg.validate();
    OrthusModel<S> m;
    m.cfg = cfg;
    m.cfg.model_embed_kind = int64_t(embed_kind);  // keep the config honest about
    m.cfg.model_head_kind = int64_t(head_kind);    // what was actually built
    m.embed_kind = embed_kind;
    m.head_kind = head_kind;
    m.bb = backbone_config<S>(cfg);
    m.head.latent_dim = cfg.ae_latent_dim;
    m.head.cond_dim = cfg.model_dim;
    m.head.width = cfg.diff_head_width;
    m.head.blocks = cfg.diff_head_blocks;
    m.sched = DiffusionSchedule::linear(int(cfg.diff_timesteps), cfg.diff_beta_start, cfg.diff_beta_end,
                                        int(cfg.diff_sample_steps));
    m.t_table = timestep_table<S>(int(cfg.diff_timesteps), cfg.model_dim);
    return m;
}

// Builds a fresh model around frozen autoencoder parameters. The vision codes
// start from the trained quantiser codebook; the embedding table is gaussian.
template <class S>
OrthusModel<S> make_model(const Config& cfg, EmbedKind embed_kind, HeadKind head_kind,
                          const ParamStore<S>& ae_params, Rng& rng) {
    OrthusModel<S> m = model_shell<S>(cfg, embed_kind, head_kind);

    // frozen image tokenizer, trained beforehand
    for (const auto& e : ae_params.entries()) {
        if (e.name.rfind("ae.", 0) != 0) fail("autoencoder store has a foreign entry ", e.name);
        m.store.add(e.name, e.value, /*trainable=*/false);
    }
    if (ae_latent_dim(m.store) != cfg.ae_latent_dim)
        fail("autoencoder latent dim ", ae_latent_dim(m.store), " does not match config value ",
             cfg.ae_latent_dim);

    // vision embedding: codes seeded from the quantiser codebook
    const MatrixX<S>& vq = m.store.at("ae.vq.codes");
    if (vq.rows() != cfg.ae_codebook_size)
        fail("codebook size ", vq.rows(), " does not match config value ", cfg.ae_codebook_size);
    m.store.add("vis.codes", vq);
    m.store.add_gaussian("vis.embed", cfg.ae_codebook_size, cfg.model_dim, rng, cfg.model_init_std);
    if (embed_kind == EmbedKind::Linear)
        m.store.add_gaussian("vis.proj", cfg.ae_latent_dim, cfg.model_dim, rng, cfg.model_init_std);
    m.store.add_gaussian("txt.embed", vocab::kSize, cfg.model_dim, rng, cfg.model_init_std);

    init_backbone_params(m.store, m.bb, rng);
    init_lm_head_params<S>(m.store, cfg.model_dim, vocab::kSize);
    if (head_kind == HeadKind::Diffusion) init_diffusion_head_params(m.store, m.head, rng);
    else init_mse_head_params(m.store, m.head, rng);
    return m;
}

// Rebuilds a model around an existing parameter set, typically one loaded
// from a checkpoint; the variant selectors come from the config.
template <class S>
OrthusModel<S> model_from_store(const Config& cfg, ParamStore<S> store) {
    OrthusModel<S> m = model_shell<S>(cfg, embed_kind_of(cfg), head_kind_of(cfg));
    const char* required[] = {"ae.enc.W", "ae.vq.codes", "vis.codes", "vis.embed",
                              "txt.embed", "lm.W",        "bb.final.g"};
    for (const char* name : required)
        if (!store.has(name)) fail("parameter set is missing \"", name, '"');
    if (m.embed_kind == EmbedKind::Linear && !store.has("vis.proj"))
        fail("parameter set is missing \"vis.proj\"");
    const char* head_probe = m.head_kind == HeadKind::Diffusion ? "diff_head.out.W" : "mse_head.W3";
    if (!store.has(head_probe)) fail("parameter set is missing \"", head_probe, '"');
    if (ae_latent_dim(store) != cfg.ae_latent_dim)
        fail("autoencoder latent dim ", ae_latent_dim(store), " does not match config value ",
             cfg.ae_latent_dim);
    m.store = std::move(store);
    return m;
}

// --- sequence embedding ---------------------------------------------------

template <class S>
struct EmbeddedSeq {
    NodeId states = -1;  // backbone output, T x d_e
    std::vector<PosItem> positions;
    std::vector<NodeId> patch_inputs;           // one input node per non-empty image segment
    typename Graph<S>::Bindings bindings;       // patch feature matrices
    std::vector<const MatrixX<S>*> patch_data;  // per image segment (empty ones included), borrowed
};

// Embeds the flattened sequence: token runs through the text table, patch
// runs through the configured vision path, all concatenated in order and fed
// to the backbone.
template <class S>
EmbeddedSeq<S> build_sequence_states(Graph<S>& g, const OrthusModel<S>& model,
                                     const MixedSequence<S>& seq, const ParamFn<S>& param) {
    EmbeddedSeq<S> out;
    out.positions = flatten(seq);
    if (out.positions.empty()) fail("cannot embed an empty sequence");
    Index total = Index(out.positions.size());
    if (total > model.bb.max_len)
        fail("sequence length ", total, " exceeds the backbone maximum ", model.bb.max_len);

    NodeId txt = param(g, "txt.embed", vocab::kSize, model.bb.dim);
    std::vector<NodeId> parts;
    std::vector<Index> token_run;
    auto flush_tokens = [&] {
        if (token_run.empty()) return;
        parts.push_back(g.gather(txt, token_run, "embed.text"));
        token_run.clear();
    };

    int img_count = 0;
    for (const auto& seg : seq.segments)
        if (std::holds_alternative<ImageSegment<S>>(seg)) ++img_count;
    out.patch_data.resize(size_t(img_count));

    int img_idx = 0;
    for (const auto& seg : seq.segments) {
        if (const auto* text = std::get_if<TextSegment>(&seg)) {
            for (int id : text->ids) token_run.push_back(id);
            continue;
        }
        const auto& img = std::get<ImageSegment<S>>(seg);
        token_run.push_back(vocab::kBoi);
        out.patch_data[size_t(img_idx)] = &img.patches;
        if (img.patches.rows() == 0) {  // freshly opened image: only its bracket so far
            if (!img.open) token_run.push_back(vocab::kEoi);
            ++img_idx;
            continue;
        }
        if (img.patches.cols() != model.latent_dim())
            throw ShapeError("image segment features are " + std::to_string(img.patches.cols()) +
                             "-dimensional, expected " + std::to_string(model.latent_dim()));
        flush_tokens();
        std::string name = "patches." + std::to_string(img_idx);
        NodeId v = g.input(name, img.patches.rows(), img.patches.cols(), /*requires_grad=*/true, name);
        out.bindings[name] = img.patches;
        out.patch_inputs.push_back(v);
        switch (model.embed_kind) {
            case EmbedKind::Softmax:
                parts.push_back(embed_soft(g, v, param(g, "vis.codes", model.cfg.ae_codebook_size,
                                                       model.latent_dim()),
                                           param(g, "vis.embed", model.cfg.ae_codebook_size, model.bb.dim),
                                           S(model.cfg.embed_tau), "embed.vis"));
                break;
            case EmbedKind::Argmin:
                parts.push_back(embed_hard(
                    g, param(g, "vis.embed", model.cfg.ae_codebook_size, model.bb.dim),
                    quantize_rows(img.patches, model.store.at("vis.codes")), "embed.vis"));
                break;
            case EmbedKind::Linear:
                parts.push_back(embed_linear(
                    g, v, param(g, "vis.proj", model.latent_dim(), model.bb.dim), "embed.vis"));
                break;
        }
        if (!img.open) token_run.push_back(vocab::kEoi);
        ++img_idx;
    }
    flush_tokens();

    NodeId embedded = parts.size() == 1 ? parts[0] : g.concat(parts, 0, "embed.seq");
    out.states = build_transformer(g, embedded, total, model.bb, param);
    return out;
}

// Backbone states without gradients, as plain values.
template <class S>
MatrixX<S> forward_states(const OrthusModel<S>& model, const MixedSequence<S>& seq) {
    Graph<S> g;
    EmbeddedSeq<S> es = build_sequence_states(g, model, seq, frozen_params<S>());
    g.forward(es.bindings, &model.store);
    return g.value(es.states);
}

// --- next-position training loss -------------------------------------------

template <class S>
struct SequenceLoss {
    EmbeddedSeq<S> embedded;
    NodeId total = -1;
    NodeId token_loss = -1;  // -1 when the objective or layout has no token term
    NodeId patch_loss = -1;  // -1 when absent
    Index token_targets = 0;
    Index patch_targets = 0;
};

// Builds the combined loss for one sequence: every position predicts its
// successor. Token successors contribute mean cross entropy (padding rows are
// skipped); patch successors contribute the noise-prediction objective, mean
// squared error per patch, weighted by train_lambda in the total. The
// regression-head variant predicts the feature row directly from the state.
template <class S>
SequenceLoss<S> build_sequence_loss(Graph<S>& g, const OrthusModel<S>& model,
                                    const MixedSequence<S>& seq, Objective objective,
                                    const ParamFn<S>& param, Rng& rng, bool enable_cond_drop = true) {
    SequenceLoss<S> out;
    out.embedded = build_sequence_states(g, model, seq, param);
    const auto& pos = out.embedded.positions;

    std::vector<Index> token_rows;    // predictor rows whose successor is a token
    std::vector<Index> token_ids;     // the successor token ids
    std::vector<Index> patch_rows;    // predictor rows whose successor is a patch
    std::vector<const PosItem*> patch_items;
    for (size_t i = 0; i + 1 < pos.size(); ++i) {
        const PosItem& next = pos[i + 1];
        if (next.is_patch) {
            patch_rows.push_back(Index(i));
            patch_items.push_back(&next);
        } else if (next.token != vocab::kPad) {
            token_rows.push_back(Index(i));
            token_ids.push_back(next.token);
        }
    }

    bool want_tokens = objective != Objective::GenerationOnly && !token_rows.empty();
    bool want_patches = objective != Objective::UnderstandingOnly && !patch_rows.empty();
    if (!want_tokens && !want_patches) fail("sequence contributes no loss term under this objective");

    const Config& cfg = model.cfg;
    std::vector<NodeId> terms;

    if (want_tokens) {
        out.token_targets = Index(token_rows.size());
        NodeId logits = build_lm_logits(g, g.gather(out.embedded.states, token_rows, "loss.tok.states"),
                                        model.bb.dim, vocab::kSize, param);
        out.token_loss = g.mean(g.cross_entropy(logits, token_ids, "loss.tok.ce"), "loss.tok");
        terms.push_back(out.token_loss);
    }

    if (want_patches) {
        out.patch_targets = Index(patch_rows.size());
        Index P = out.patch_targets;
        Index dv = model.latent_dim();
        NodeId states_sel = g.gather(out.embedded.states, patch_rows, "loss.img.states");

        NodeId pred;
        MatrixX<S> target(P, dv);
        for (Index r = 0; r < P; ++r)
            target.row(r) =
                out.embedded.patch_data[size_t(patch_items[size_t(r)]->image_index)]->row(
                    patch_items[size_t(r)]->patch_row);

        if (model.head_kind == HeadKind::Diffusion) {
            // per-row draws: timestep, noise vector, conditioning keep/drop
            MatrixX<S> x_t(P, dv), eps(P, dv), keep(P, 1);
            std::vector<Index> t_idx(static_cast<size_t>(P));
            for (Index r = 0; r < P; ++r) {
                int t = int(rng.below(Stream::DiffTime, uint64_t(model.sched.timesteps))) + 1;
                t_idx[size_t(r)] = t;
                double ab = model.sched.alpha_bar[size_t(t)];
                for (Index c = 0; c < dv; ++c) {
                    eps(r, c) = S(rng.gaussian(Stream::DiffNoise));
                    x_t(r, c) = S(std::sqrt(ab)) * target(r, c) + S(std::sqrt(1.0 - ab)) * eps(r, c);
                }
                keep(r, 0) = enable_cond_drop && rng.uniform(Stream::CondDrop) < cfg.diff_cond_drop
                                 ? S(0)
                                 : S(1);
            }
            MatrixX<S> drop = MatrixX<S>::Ones(P, 1) - keep;
            NodeId f_part = g.mul(states_sel, g.constant(keep, "loss.img.keep"), "loss.img.f");
            NodeId null_rows = g.matmul(g.constant(MatrixX<S>::Ones(P, 1)),
                                        param(g, "diff_head.null", 1, model.bb.dim), false, false);
            NodeId n_part = g.mul(null_rows, g.constant(drop, "loss.img.drop"), "loss.img.null");
            NodeId t_emb = g.gather(g.constant(model.t_table, "t.table"), t_idx, "loss.img.temb");
            NodeId cond = g.add(t_emb, g.add(f_part, n_part), "loss.img.cond");
            NodeId eps_hat = build_diffusion_head(g, g.constant(x_t, "loss.img.xt"), cond, model.head, param);
            NodeId d = g.add(eps_hat, g.scale(g.constant(eps, "loss.img.eps"), S(-1)), "loss.img.err");
            pred = g.scale(g.sum(g.mul(d, d)), S(1) / S(P), "loss.img");
        } else {
            NodeId yhat = build_mse_head(g, states_sel, model.head, param);
            NodeId d = g.add(yhat, g.scale(g.constant(target, "loss.img.v"), S(-1)), "loss.img.err");
            pred = g.scale(g.sum(g.mul(d, d)), S(1) / S(P), "loss.img");
        }
        out.patch_loss = pred;
        terms.push_back(g.scale(pred, S(cfg.train_lambda), "loss.img.weighted"));
    }

    out.total = terms.size() == 1 ? terms[0] : g.add(terms[0], terms[1], "loss.total");
    return out;
}

}  // namespace orthus
