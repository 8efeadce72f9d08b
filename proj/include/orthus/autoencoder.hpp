#pragma once

#include "orthus/adamw.hpp"
#include "orthus/embedding.hpp"
#include "orthus/synth.hpp"

#include <functional>
#include <memory>
#include <unordered_map>

namespace orthus {

// Patch autoencoder with a vector-quantised bottleneck. Per-patch linear
// projections plus one zero-initialised cross-patch mixing residual on each
// side; small enough to train in seconds yet lossy enough that quantisation
// visibly costs reconstruction quality.
struct AutoencoderConfig {
    Index latent_dim = 8;  // d_v
    Index codebook = 64;   // K
    double commit_weight = 0.25;
    double lr = 1e-3;
    Index batch = 32;
    int64_t steps = 3000;
};

template <class S>
void init_autoencoder_params(ParamStore<S>& store, const AutoencoderConfig& cfg, Rng& rng) {
    store.add_gaussian("ae.enc.W", kPatchPixels, cfg.latent_dim, rng, 0.2);
    store.add("ae.enc.b", MatrixX<S>::Zero(1, cfg.latent_dim));
    store.add("ae.enc.M", MatrixX<S>::Zero(kPatchCount, kPatchCount));
    store.add("ae.dec.M", MatrixX<S>::Zero(kPatchCount, kPatchCount));
    store.add_gaussian("ae.dec.W", cfg.latent_dim, kPatchPixels, rng, 0.2);
    store.add("ae.dec.b", MatrixX<S>::Zero(1, kPatchPixels));
    store.add("ae.vq.codes", MatrixX<S>::Zero(cfg.codebook, cfg.latent_dim));
}

// Exact-reconstruction configuration used by tests: latent = patch pixels,
// identity projections, zero mixing.
template <class S>
ParamStore<S> identity_autoencoder(Index codebook = 4) {
    ParamStore<S> store;
    store.add("ae.enc.W", MatrixX<S>(MatrixX<S>::Identity(kPatchPixels, kPatchPixels)));
    store.add("ae.enc.b", MatrixX<S>::Zero(1, kPatchPixels));
    store.add("ae.enc.M", MatrixX<S>::Zero(kPatchCount, kPatchCount));
    store.add("ae.dec.M", MatrixX<S>::Zero(kPatchCount, kPatchCount));
    store.add("ae.dec.W", MatrixX<S>(MatrixX<S>::Identity(kPatchPixels, kPatchPixels)));
    store.add("ae.dec.b", MatrixX<S>::Zero(1, kPatchPixels));
    store.add("ae.vq.codes", MatrixX<S>::Zero(codebook, kPatchPixels));
    return store;
}

template <class S>
Index ae_latent_dim(const ParamStore<S>& store) {
    return store.at("ae.enc.W").cols();
}

// param = declare a store parameter in the graph; trainability is the
// caller's choice so the same builder serves training and frozen inference.
// One ParamFn instance belongs to one Graph: it caches node ids by name so a
// parameter used twice in a build still declares a single node.
template <class S>
using ParamFn = std::function<NodeId(Graph<S>&, const std::string&, Index, Index)>;

template <class S>
ParamFn<S> trainable_params(const ParamStore<S>& store) {
    // cache per name: one node per parameter even when builders re-request it
    auto cache = std::make_shared<std::unordered_map<std::string, NodeId>>();
    return [&store, cache](Graph<S>& g, const std::string& name, Index r, Index c) {
        auto it = cache->find(name);
        if (it != cache->end()) return it->second;
        NodeId id = g.param(name, r, c, store.trainable(name));
        cache->emplace(name, id);
        return id;
    };
}

template <class S>
ParamFn<S> frozen_params() {
    auto cache = std::make_shared<std::unordered_map<std::string, NodeId>>();
    return [cache](Graph<S>& g, const std::string& name, Index r, Index c) {
        auto it = cache->find(name);
        if (it != cache->end()) return it->second;
        NodeId id = g.param(name, r, c, false);
        cache->emplace(name, id);
        return id;
    };
}

template <class S>
NodeId build_encoder(Graph<S>& g, NodeId patches, Index latent_dim, const ParamFn<S>& param) {
    NodeId proj = g.add(g.matmul(patches, param(g, "ae.enc.W", kPatchPixels, latent_dim)),
                        param(g, "ae.enc.b", 1, latent_dim), "ae.enc.proj");
    NodeId mix = g.silu(g.matmul(param(g, "ae.enc.M", kPatchCount, kPatchCount), proj), "ae.enc.mix");
    return g.add(proj, mix, "ae.enc.out");
}

template <class S>
NodeId build_decoder(Graph<S>& g, NodeId features, Index latent_dim, const ParamFn<S>& param) {
    NodeId mix = g.silu(g.matmul(param(g, "ae.dec.M", kPatchCount, kPatchCount), features), "ae.dec.mix");
    NodeId h = g.add(features, mix, "ae.dec.in");
    return g.add(g.matmul(h, param(g, "ae.dec.W", latent_dim, kPatchPixels)),
                 param(g, "ae.dec.b", 1, kPatchPixels), "ae.dec.out");
}

// Patch features for one image (no gradients).
template <class S>
MatrixX<S> encode_features(const ParamStore<S>& store, const Image& image) {
    Graph<S> g;
    NodeId in = g.constant(patchify(image).template cast<S>());
    NodeId f = build_encoder<S>(g, in, ae_latent_dim(store), frozen_params<S>());
    g.forward({}, &store);
    return g.value(f);
}

// Image from patch features, clamped to the unit range.
template <class S>
Image decode_features(const ParamStore<S>& store, const MatrixX<S>& features) {
    Graph<S> g;
    NodeId out = build_decoder<S>(g, g.constant(features), ae_latent_dim(store), frozen_params<S>());
    g.forward({}, &store);
    MatrixX<float> patches = g.value(out).template cast<float>();
    return unpatchify(patches).cwiseMax(0.0f).cwiseMin(1.0f);
}

struct VqReport {
    std::vector<double> loss_curve;
    std::vector<int64_t> code_usage;  // selections per code over the last pass
    double final_loss = 0;
};

namespace detail {

template <class S>
void accumulate_param_grads(const Graph<S>& g, GradMap<S>& grads, double scale) {
    for (NodeId id = 0; id < NodeId(g.size()); ++id) {
        const auto& n = g.at(id);
        if (n.op != Op::Param || !n.requires_grad) continue;
        const MatrixX<S>* gr = g.grad(id);
        if (!gr) continue;
        auto it = grads.find(n.name);
        if (it == grads.end()) grads.emplace(n.name, *gr * S(scale));
        else it->second += *gr * S(scale);
    }
}

}  // namespace detail

// Stage-one training: reconstruction through the straight-through quantiser
// plus codebook and commitment terms. Returns the trained parameters.
template <class S>
VqReport train_vq_autoencoder(ParamStore<S>& store, const Corpus& corpus, const AutoencoderConfig& cfg,
                              Rng& rng) {
    if (corpus.empty()) throw TrainError("cannot train on an empty corpus");
    VqReport report;
    report.code_usage.assign(size_t(cfg.codebook), 0);

    // Pre-compute patch matrices once; the corpus is fixed.
    std::vector<MatrixX<S>> patches;
    patches.reserve(corpus.size());
    for (const auto& item : corpus) patches.push_back(patchify(item.image).template cast<S>());

    // Seed the codebook from real encoder outputs so every code starts inside
    // the feature distribution.
    {
        MatrixX<S>& codes = store.at("ae.vq.codes");
        Index filled = 0;
        for (size_t i = 0; i < corpus.size() && filled < cfg.codebook; ++i) {
            Graph<S> g;
            NodeId f = build_encoder<S>(g, g.constant(patches[i]), cfg.latent_dim, frozen_params<S>());
            g.forward({}, &store);
            const MatrixX<S>& F = g.value(f);
            for (Index r = 0; r < F.rows() && filled < cfg.codebook; ++r, ++filled) {
                codes.row(filled) = F.row(r);
                for (Index c = 0; c < F.cols(); ++c)
                    codes(filled, c) += S(rng.gaussian(Stream::Init) * 0.01);
            }
        }
        // tiny corpora may not fill every slot; remaining rows stay near zero
        for (; filled < cfg.codebook; ++filled)
            for (Index c = 0; c < cfg.latent_dim; ++c)
                codes(filled, c) = S(rng.gaussian(Stream::Init) * 0.01);
    }

    AdamWState<S> opt;
    AdamWConfig<S> opt_cfg;
    opt_cfg.lr = S(cfg.lr);

    for (int64_t step = 0; step < cfg.steps; ++step) {
        GradMap<S> grads;
        double loss_sum = 0;
        bool last_pass = step + 1 == cfg.steps;
        for (Index b = 0; b < cfg.batch; ++b) {
            size_t idx = size_t(rng.below(Stream::DataOrder, corpus.size()));
            const MatrixX<S>& target = patches[idx];

            // pass 1: current features fix the code assignment
            Graph<S> enc_only;
            NodeId f0 =
                build_encoder<S>(enc_only, enc_only.constant(target), cfg.latent_dim, frozen_params<S>());
            enc_only.forward({}, &store);
            std::vector<Index> assignment = quantize_rows(enc_only.value(f0), store.at("ae.vq.codes"));
            if (last_pass)
                for (Index a : assignment) ++report.code_usage[size_t(a)];

            MatrixX<S> quantized(kPatchCount, cfg.latent_dim);
            for (Index r = 0; r < kPatchCount; ++r)
                quantized.row(r) = store.at("ae.vq.codes").row(assignment[size_t(r)]);

            // pass 2: differentiable step with the assignment frozen
            Graph<S> g;
            auto param = trainable_params(store);
            NodeId f = build_encoder<S>(g, g.constant(target), cfg.latent_dim, param);
            // straight-through: decoder sees the codes, encoder sees the
            // gradient as if it had produced them
            NodeId st = g.add(f, g.constant(MatrixX<S>(quantized - enc_only.value(f0))), "vq.st");
            NodeId recon = build_decoder<S>(g, st, cfg.latent_dim, param);
            NodeId rec_loss = g.mse(recon, g.constant(target), "vq.recon");
            NodeId code_loss = g.mse(g.gather(param(g, "ae.vq.codes", cfg.codebook, cfg.latent_dim),
                                              assignment),
                                     g.constant(enc_only.value(f0)), "vq.code");
            NodeId commit = g.mse(f, g.constant(quantized), "vq.commit");
            NodeId loss =
                g.add(g.add(rec_loss, code_loss), g.scale(commit, S(cfg.commit_weight)), "vq.loss");
            g.forward({}, &store);
            g.backward(loss);
            loss_sum += double(g.value(loss)(0, 0));
            detail::accumulate_param_grads(g, grads, 1.0 / double(cfg.batch));
        }
        adamw_step(store, grads, opt, opt_cfg);
        report.loss_curve.push_back(loss_sum / double(cfg.batch));
    }
    report.final_loss = report.loss_curve.back();
    return report;
}

struct FinetuneReport {
    std::vector<double> loss_curve;
};

// Stage-two decoder adaptation: quantisation dropped, encoder and codes
// frozen, decoder trained on continuous features.
template <class S>
FinetuneReport finetune_decoder(ParamStore<S>& store, const Corpus& corpus, double lr, Index batch,
                                int64_t steps, Rng& rng) {
    if (corpus.empty()) throw TrainError("cannot finetune on an empty corpus");
    store.set_trainable_by_prefix("ae.enc.", false);
    store.set_trainable_by_prefix("ae.vq.", false);
    store.set_trainable_by_prefix("ae.dec.", true);

    std::vector<MatrixX<S>> patches;
    patches.reserve(corpus.size());
    for (const auto& item : corpus) patches.push_back(patchify(item.image).template cast<S>());

    Index latent = ae_latent_dim(store);
    AdamWState<S> opt;
    AdamWConfig<S> opt_cfg;
    opt_cfg.lr = S(lr);

    FinetuneReport report;
    for (int64_t step = 0; step < steps; ++step) {
        GradMap<S> grads;
        double loss_sum = 0;
        for (Index b = 0; b < batch; ++b) {
            size_t idx = size_t(rng.below(Stream::DataOrder, corpus.size()));
            Graph<S> g;
            auto param = trainable_params(store);
            NodeId f = build_encoder<S>(g, g.constant(patches[idx]), latent, param);
            NodeId recon = build_decoder<S>(g, f, latent, param);
            NodeId loss = g.mse(recon, g.constant(patches[idx]), "ft.loss");
            g.forward({}, &store);
            g.backward(loss);
            loss_sum += double(g.value(loss)(0, 0));
            detail::accumulate_param_grads(g, grads, 1.0 / double(batch));
        }
        adamw_step(store, grads, opt, opt_cfg);
        report.loss_curve.push_back(loss_sum / double(batch));
    }
    return report;
}

struct ReconMetrics {
    double mean_psnr = 0;
    double mean_ssim = 0;
};

// Reconstruction quality over a corpus, with or without the quantiser.
template <class S>
ReconMetrics eval_reconstruction(const ParamStore<S>& store, const Corpus& corpus, bool quantized) {
    if (corpus.empty()) fail("cannot evaluate on an empty corpus");
    ReconMetrics m;
    for (const auto& item : corpus) {
        MatrixX<S> f = encode_features(store, item.image);
        if (quantized) {
            const MatrixX<S>& codes = store.at("ae.vq.codes");
            for (Index r = 0; r < f.rows(); ++r)
                f.row(r) = codes.row(quantize_hard<S>(f.row(r), codes));
        }
        Image recon = decode_features(store, f);
        m.mean_psnr += psnr(recon, item.image);
        m.mean_ssim += ssim(recon, item.image);
    }
    m.mean_psnr /= double(corpus.size());
    m.mean_ssim /= double(corpus.size());
    return m;
}

}  // namespace orthus
