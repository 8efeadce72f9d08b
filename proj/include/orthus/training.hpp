#pragma once

#include "orthus/adamw.hpp"
#include "orthus/autoencoder.hpp"
#include "orthus/model.hpp"
#include "orthus/synth.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace orthus {

// --- reporting --------------------------------------------------------------

struct StepRecord {
    double token_loss = std::numeric_limits<double>::quiet_NaN();  // NaN: term absent
    double patch_loss = std::numeric_limits<double>::quiet_NaN();
    double total = 0;
};

struct TrainReport {
    std::vector<StepRecord> curve;  // one record per optimizer step
    double wall_seconds = 0;
    std::string checkpoint_id;  // content hash of the final parameter set
    std::string metrics_log;    // plain text: step, token loss, patch loss, total
};

namespace detail {

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "-";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string metrics_text(const std::vector<StepRecord>& curve, int64_t first_step) {
    std::string out = "# step\ttoken_loss\tpatch_loss\ttotal\n";
    for (size_t i = 0; i < curve.size(); ++i) {
        out += std::to_string(first_step + int64_t(i));
        out += '\t';
        out += format_metric(curve[i].token_loss);
        out += '\t';
        out += format_metric(curve[i].patch_loss);
        out += '\t';
        out += format_metric(curve[i].total);
        out += '\n';
    }
    return out;
}

inline std::string hash_id(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

// Mean of a curve column over its first / last `window` entries. Smoothing is
// what makes "loss halves" robust against single-step noise.
inline double smoothed_head(const std::vector<StepRecord>& curve, size_t window,
                            double StepRecord::*field) {
    if (curve.empty()) fail("empty loss curve");
    window = std::min(window, curve.size());
    double s = 0;
    for (size_t i = 0; i < window; ++i) s += curve[i].*field;
    return s / double(window);
}

inline double smoothed_tail(const std::vector<StepRecord>& curve, size_t window,
                            double StepRecord::*field) {
    if (curve.empty()) fail("empty loss curve");
    window = std::min(window, curve.size());
    double s = 0;
    for (size_t i = curve.size() - window; i < curve.size(); ++i) s += curve[i].*field;
    return s / double(window);
}

inline size_t smoothing_window(size_t steps) { return std::max<size_t>(1, std::min<size_t>(50, steps / 10)); }

// --- stage plumbing ---------------------------------------------------------

enum class DataMix { ImageOnly, Mixed };  // Mixed: caption->image / image->caption, alternating

struct StageSettings {
    Objective objective = Objective::Unified;
    DataMix mix = DataMix::Mixed;
    double lr = 1e-3;
    Index batch = 8;
    int64_t steps = 0;
};

// Marks which parameter groups the stage may update. The first stage touches
// only the vision embedding and the generative head; the second touches
// everything except the image autoencoder. The quantiser codebook is only
// meaningfully trainable on the soft embedding path (the hard path reads it
// outside the graph), so it stays frozen for the other embedding kinds.
template <class S>
void set_stage_trainability(OrthusModel<S>& model, bool base_stage) {
    const char* head_prefix = model.head_kind == HeadKind::Diffusion ? "diff_head." : "mse_head.";
    for (auto& e : model.store.entries()) {
        bool on;
        if (base_stage)
            on = e.name.rfind("vis.", 0) == 0 || e.name.rfind(head_prefix, 0) == 0;
        else
            on = e.name.rfind("ae.", 0) != 0;
        if (e.name == "vis.codes" && model.embed_kind != EmbedKind::Softmax) on = false;
        e.trainable = on;
    }
}

// Pre-encodes every corpus image once; the autoencoder is frozen during both
// stages, so features never change.
template <class S>
std::vector<MatrixX<S>> encode_corpus(const ParamStore<S>& store, const Corpus& corpus) {
    std::vector<MatrixX<S>> out;
    out.reserve(corpus.size());
    for (const auto& item : corpus) out.push_back(encode_features(store, item.image));
    return out;
}

// One stage of next-position training. Resumable: item order comes from the
// RNG counters and the layout parity from the optimizer step count, so a
// (params, rng, optimizer) snapshot continues exactly where it stopped.
template <class S>
TrainReport run_training_stage(OrthusModel<S>& model, const std::vector<MatrixX<S>>& features,
                               const std::vector<std::vector<int>>& captions, const StageSettings& st,
                               Rng& rng, AdamWState<S>& opt) {
    if (features.empty()) fail("training corpus is empty");
    if (st.mix == DataMix::Mixed && captions.size() != features.size())
        fail("caption table has ", captions.size(), " entries for ", features.size(), " images");
    if (st.batch <= 0) fail("batch size must be positive");
    auto t0 = std::chrono::steady_clock::now();

    AdamWConfig<S> ocfg;
    ocfg.lr = S(st.lr);
    ocfg.beta1 = S(model.cfg.train_adam_beta1);
    ocfg.beta2 = S(model.cfg.train_adam_beta2);
    ocfg.eps = S(model.cfg.train_adam_eps);
    ocfg.weight_decay = S(model.cfg.train_weight_decay);

    TrainReport rep;
    int64_t first_step = opt.t;
    for (int64_t step = 0; step < st.steps; ++step) {
        GradMap<S> grads;
        double tok_sum = 0, patch_sum = 0, tot_sum = 0;
        int tok_n = 0, patch_n = 0;
        int64_t k0 = opt.t * st.batch;  // global element index, drives the layout parity
        for (Index b = 0; b < st.batch; ++b) {
            size_t idx = size_t(rng.below(Stream::DataOrder, features.size()));
            MixedSequence<S> seq;
            if (st.mix == DataMix::ImageOnly) {
                seq = image_only_sequence<S>(features[idx]);
            } else if ((k0 + b) % 2 == 0) {
                seq = caption_to_image_sequence<S>(captions[idx], features[idx]);
            } else {
                seq = image_to_caption_sequence<S>(features[idx], captions[idx]);
            }
            Graph<S> g;
            ParamFn<S> param = trainable_params<S>(model.store);
            SequenceLoss<S> loss = build_sequence_loss(g, model, seq, st.objective, param, rng);
            g.forward(loss.embedded.bindings, &model.store);
            double tot = double(g.value(loss.total)(0, 0));
            if (!std::isfinite(tot))
                throw TrainError("non-finite loss at optimizer step " + std::to_string(opt.t));
            g.backward(loss.total);
            detail::accumulate_param_grads(g, grads, 1.0 / double(st.batch));
            if (loss.token_loss != -1) {
                tok_sum += double(g.value(loss.token_loss)(0, 0));
                ++tok_n;
            }
            if (loss.patch_loss != -1) {
                patch_sum += double(g.value(loss.patch_loss)(0, 0));
                ++patch_n;
            }
            tot_sum += tot;
        }
        adamw_step(model.store, grads, opt, ocfg);
        StepRecord rec;
        if (tok_n) rec.token_loss = tok_sum / tok_n;
        if (patch_n) rec.patch_loss = patch_sum / patch_n;
        rec.total = tot_sum / double(st.batch);
        rep.curve.push_back(rec);
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.checkpoint_id = detail::hash_id(model.store.hash_group());
    rep.metrics_log = detail::metrics_text(rep.curve, first_step);
    return rep;
}

// Stage one: image-only sequences, patch loss only; updates the vision
// embedding and the generative head around the frozen random backbone.
template <class S>
TrainReport train_base(OrthusModel<S>& model, const Corpus& corpus, Rng& rng, AdamWState<S>& opt,
                       int64_t steps_override = -1) {
    set_stage_trainability(model, /*base_stage=*/true);
    StageSettings st;
    st.objective = Objective::GenerationOnly;
    st.mix = DataMix::ImageOnly;
    st.lr = model.cfg.train_base_lr;
    st.batch = Index(model.cfg.train_base_batch);
    st.steps = steps_override >= 0 ? steps_override : model.cfg.train_base_steps;
    std::vector<MatrixX<S>> features = encode_corpus(model.store, corpus);
    return run_training_stage(model, features, {}, st, rng, opt);
}

// Stage two: alternating caption->image / image->caption layouts, combined
// loss; everything except the autoencoder is tuned.
template <class S>
TrainReport post_train(OrthusModel<S>& model, const Corpus& corpus, Rng& rng, AdamWState<S>& opt,
                       int64_t steps_override = -1, Objective objective = Objective::Unified) {
    set_stage_trainability(model, /*base_stage=*/false);
    StageSettings st;
    st.objective = objective;
    st.mix = DataMix::Mixed;
    st.lr = model.cfg.train_post_lr;
    st.batch = Index(model.cfg.train_post_batch);
    st.steps = steps_override >= 0 ? steps_override : model.cfg.train_post_steps;
    std::vector<MatrixX<S>> features = encode_corpus(model.store, corpus);
    std::vector<std::vector<int>> captions;
    captions.reserve(corpus.size());
    for (const auto& item : corpus) captions.push_back(item.caption);
    return run_training_stage(model, features, captions, st, rng, opt);
}

// Held-out losses under a fixed evaluation seed: no conditioning dropout
// surprises across variants because every sequence draws the same timesteps
// and noise (the draw count per sequence is layout-determined).
struct EvalLosses {
    double token_loss = std::numeric_limits<double>::quiet_NaN();
    double patch_loss = std::numeric_limits<double>::quiet_NaN();
    double combined = 0;  // token + lambda * patch (absent terms count as 0)
};

template <class S>
EvalLosses eval_losses(const OrthusModel<S>& model, const Corpus& corpus, uint64_t eval_seed) {
    if (corpus.empty()) fail("held-out corpus is empty");
    Rng rng(eval_seed);
    std::vector<MatrixX<S>> features = encode_corpus(model.store, corpus);
    double tok_sum = 0, patch_sum = 0;
    int tok_n = 0, patch_n = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
        MixedSequence<S> seq = i % 2 == 0
                                   ? caption_to_image_sequence<S>(corpus[i].caption, features[i])
                                   : image_to_caption_sequence<S>(features[i], corpus[i].caption);
        Graph<S> g;
        ParamFn<S> param = frozen_params<S>();
        SequenceLoss<S> loss =
            build_sequence_loss(g, model, seq, Objective::Unified, param, rng, /*enable_cond_drop=*/false);
        g.forward(loss.embedded.bindings, &model.store);
        if (loss.token_loss != -1) {
            tok_sum += double(g.value(loss.token_loss)(0, 0));
            ++tok_n;
        }
        if (loss.patch_loss != -1) {
            patch_sum += double(g.value(loss.patch_loss)(0, 0));
            ++patch_n;
        }
    }
    EvalLosses out;
    if (tok_n) out.token_loss = tok_sum / tok_n;
    if (patch_n) out.patch_loss = patch_sum / patch_n;
    out.combined = (tok_n ? out.token_loss : 0.0) +
                   model.cfg.train_lambda * (patch_n ? out.patch_loss : 0.0);
    return out;
}

}  // namespace orthus
