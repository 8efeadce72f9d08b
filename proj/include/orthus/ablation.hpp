#pragma once

#include "orthus/decode.hpp"
#include "orthus/training.hpp"

namespace orthus {

// --- variant metrics ----------------------------------------------------------

struct SampleSpread {
    double mean_variance = 0;  // mean over feature coordinates of the across-sample variance
    double max_variance = 0;
};

// Generates `samples` images for one fixed caption with the image block
// force-opened (so the metric isolates the head's stochasticity, not whether
// the token head has learned to open images) and measures per-coordinate
// variance of the resulting feature grids across samples.
template <class S>
SampleSpread sample_spread(const OrthusModel<S>& model, const std::vector<int>& caption, Rng& rng,
                           int samples) {
    if (samples < 2) fail("need at least two samples to measure spread");
    std::vector<MatrixX<S>> grids;
    grids.reserve(size_t(samples));
    for (int k = 0; k < samples; ++k) {
        MixedSequence<S> prompt;
        std::vector<int> head = caption;
        head.push_back(vocab::kSep);
        prompt.append_text(std::move(head));
        prompt.append_image(MatrixX<S>(0, 0), /*open=*/true);
        GenerationResult<S> res = generate(model, prompt, rng);
        const MatrixX<S>* grid = nullptr;
        for (const auto& seg : res.sequence.segments)
            if (const auto* img = std::get_if<ImageSegment<S>>(&seg)) grid = &img->patches;
        if (!grid || grid->rows() != kPatchCount) fail("generation produced no complete image");
        grids.push_back(*grid);
    }
    MatrixX<S> mean = MatrixX<S>::Zero(grids[0].rows(), grids[0].cols());
    for (const auto& g : grids) mean += g;
    mean /= S(samples);
    MatrixX<S> var = MatrixX<S>::Zero(mean.rows(), mean.cols());
    for (const auto& g : grids) var += (g - mean).cwiseProduct(g - mean);
    var /= S(samples);
    SampleSpread out;
    out.mean_variance = double(var.mean());
    out.max_variance = double(var.maxCoeff());
    return out;
}

// Fraction of held-out images whose generated caption parses as a well-formed
// attribute sentence.
template <class S>
double caption_validity_rate(const OrthusModel<S>& model, const Corpus& heldout, Rng& rng, size_t limit) {
    size_t n = std::min(limit, heldout.size());
    if (n == 0) fail("empty held-out corpus");
    size_t valid = 0;
    for (size_t i = 0; i < n; ++i) {
        std::vector<int> tokens = generate_caption(model, heldout[i].image, rng);
        if (vocab::parse_caption(tokens)) ++valid;
    }
    return double(valid) / double(n);
}

// --- the ablation runner ------------------------------------------------------

enum class AblationKind { Objective, Embedding, Head };

inline const char* ablation_kind_name(AblationKind k) {
    switch (k) {
        case AblationKind::Objective: return "objective";
        case AblationKind::Embedding: return "embedding";
        case AblationKind::Head: return "head";
    }
    return "?";
}

inline AblationKind ablation_kind_from(const std::string& s) {
    if (s == "objective") return AblationKind::Objective;
    if (s == "embedding") return AblationKind::Embedding;
    if (s == "head") return AblationKind::Head;
    throw ConfigError("unknown ablation kind \"" + s + "\" (objective|embedding|head)");
}

struct AblationRow {
    std::string variant;
    double final_token_loss = std::numeric_limits<double>::quiet_NaN();
    double final_patch_loss = std::numeric_limits<double>::quiet_NaN();
    double heldout_combined = std::numeric_limits<double>::quiet_NaN();
    double caption_valid_rate = std::numeric_limits<double>::quiet_NaN();
    double sample_mean_variance = std::numeric_limits<double>::quiet_NaN();
    double sample_max_variance = std::numeric_limits<double>::quiet_NaN();
    double recon_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct AblationReport {
    AblationKind kind = AblationKind::Objective;
    std::vector<AblationRow> rows;
    bool ordering_checked = false;  // embedding runs compare combined held-out losses
    bool ordering_ok = false;
    std::string table;  // human-readable rendering of the rows
};

namespace detail {

inline std::string cell(double v) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string render_ablation_table(const AblationReport& rep) {
    std::string out = "ablation kind: ";
    out += ablation_kind_name(rep.kind);
    out += "\nvariant\ttoken_loss\tpatch_loss\theldout_combined\tcaption_valid\tsample_var_mean\tsample_var_max\trecon_psnr\n";
    for (const auto& r : rep.rows) {
        out += r.variant;
        for (double v : {r.final_token_loss, r.final_patch_loss, r.heldout_combined,
                         r.caption_valid_rate, r.sample_mean_variance, r.sample_max_variance,
                         r.recon_psnr}) {
            out += '\t';
            out += cell(v);
        }
        out += '\n';
    }
    if (rep.ordering_checked) {
        out += rep.ordering_ok
                   ? "ordering check: softmax <= argmin and softmax <= linear on held-out combined loss: OK\n"
                   : "ordering check FAILED: softmax embedding did not give the lowest held-out combined loss\n";
    }
    return out;
}

}  // namespace detail

struct AblationVariant {
    std::string name;
    EmbedKind embed = EmbedKind::Softmax;
    HeadKind head = HeadKind::Diffusion;
    Objective post_objective = Objective::Unified;
};

inline std::vector<AblationVariant> ablation_variants(AblationKind kind) {
    switch (kind) {
        case AblationKind::Objective:
            return {{"unified", EmbedKind::Softmax, HeadKind::Diffusion, Objective::Unified},
                    {"understanding-only", EmbedKind::Softmax, HeadKind::Diffusion,
                     Objective::UnderstandingOnly},
                    {"generation-only", EmbedKind::Softmax, HeadKind::Diffusion,
                     Objective::GenerationOnly}};
        case AblationKind::Embedding:
            return {{"softmax", EmbedKind::Softmax, HeadKind::Diffusion, Objective::Unified},
                    {"argmin", EmbedKind::Argmin, HeadKind::Diffusion, Objective::Unified},
                    {"linear", EmbedKind::Linear, HeadKind::Diffusion, Objective::Unified}};
        case AblationKind::Head:
            return {{"diffusion", EmbedKind::Softmax, HeadKind::Diffusion, Objective::Unified},
                    {"mse", EmbedKind::Softmax, HeadKind::Mse, Objective::Unified}};
    }
    fail("unreachable ablation kind");
}

// Trains one variant end to end (short step counts from the abl_* config
// keys) on a shared frozen autoencoder and measures the comparison metrics.
template <class S>
AblationRow run_ablation_variant(const Config& cfg, const AblationVariant& v,
                                 const ParamStore<S>& ae_params, const Corpus& corpus,
                                 const Corpus& heldout, uint64_t eval_seed, int spread_samples = 64,
                                 size_t caption_prompts = 16) {
    Rng rng(cfg.seed);
    OrthusModel<S> model = make_model<S>(cfg, v.embed, v.head, ae_params, rng);

    AdamWState<S> base_opt;
    train_base(model, corpus, rng, base_opt, cfg.abl_base_steps);
    AdamWState<S> post_opt;
    TrainReport post = post_train(model, corpus, rng, post_opt, cfg.abl_post_steps, v.post_objective);

    AblationRow row;
    row.variant = v.name;
    size_t w = smoothing_window(post.curve.size());
    if (!std::isnan(post.curve.back().token_loss))
        row.final_token_loss = smoothed_tail(post.curve, w, &StepRecord::token_loss);
    if (!std::isnan(post.curve.back().patch_loss))
        row.final_patch_loss = smoothed_tail(post.curve, w, &StepRecord::patch_loss);
    row.heldout_combined = eval_losses(model, heldout, eval_seed).combined;
    Rng eval_rng(eval_seed);
    row.caption_valid_rate = caption_validity_rate(model, heldout, eval_rng, caption_prompts);
    SampleSpread spread = sample_spread(model, heldout[0].caption, eval_rng, spread_samples);
    row.sample_mean_variance = spread.mean_variance;
    row.sample_max_variance = spread.max_variance;
    row.recon_psnr = eval_reconstruction(ae_params, heldout, /*quantized=*/false).mean_psnr;
    return row;
}

template <class S>
AblationReport run_ablation(AblationKind kind, const Config& cfg, const ParamStore<S>& ae_params,
                            const Corpus& corpus, const Corpus& heldout, uint64_t eval_seed = 1234,
                            int spread_samples = 64, size_t caption_prompts = 16) {
    if (heldout.empty()) fail("ablation needs a held-out corpus");
    AblationReport rep;
    rep.kind = kind;
    for (const AblationVariant& v : ablation_variants(kind))
        rep.rows.push_back(run_ablation_variant<S>(cfg, v, ae_params, corpus, heldout, eval_seed,
                                                   spread_samples, caption_prompts));
    if (kind == AblationKind::Embedding) {
        rep.ordering_checked = true;
        double softmax = rep.rows[0].heldout_combined;
        rep.ordering_ok =
            softmax <= rep.rows[1].heldout_combined && softmax <= rep.rows[2].heldout_combined;
    }
    rep.table = detail::render_ablation_table(rep);
    return rep;
}

}  // namespace orthus
