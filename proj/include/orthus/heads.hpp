#pragma once

#include "orthus/autoencoder.hpp"

namespace orthus {

// Linear-beta noising schedule; cumulative products computed in double.
// alpha_bar(0) == 1 so that denoising to step zero returns the clean sample.
struct DiffusionSchedule {
    int timesteps = 0;
    std::vector<double> beta;       // beta[t], t in [1, T]; beta[0] unused
    std::vector<double> alpha_bar;  // alpha_bar[t], t in [0, T]
    std::vector<int> sample_steps;  // strictly increasing, last == T

    static DiffusionSchedule linear(int timesteps, double beta_start, double beta_end,
                                    int sample_count) {
        if (timesteps < 1) fail("schedule needs at least one timestep");
        if (!(beta_start > 0) || !(beta_end > beta_start) || !(beta_end < 1))
            fail("schedule needs 0 < beta_start < beta_end < 1, got ", beta_start, ", ", beta_end);
        if (sample_count < 1 || sample_count > timesteps)
            fail("sample step count ", sample_count, " out of range [1, ", timesteps, ']');
        if (timesteps % sample_count != 0)
            fail("sample step count ", sample_count, " must divide the ", timesteps, " timesteps evenly");
        DiffusionSchedule s;
        s.timesteps = timesteps;
        s.beta.resize(size_t(timesteps) + 1, 0.0);
        s.alpha_bar.resize(size_t(timesteps) + 1, 1.0);
        for (int t = 1; t <= timesteps; ++t) {
            double frac = timesteps == 1 ? 0.0 : double(t - 1) / double(timesteps - 1);
            s.beta[size_t(t)] = beta_start + (beta_end - beta_start) * frac;
            s.alpha_bar[size_t(t)] = s.alpha_bar[size_t(t) - 1] * (1.0 - s.beta[size_t(t)]);
        }
        int stride = timesteps / sample_count;
        for (int i = 1; i <= sample_count; ++i) s.sample_steps.push_back(i * stride);
        return s;
    }
};

struct DiffusionHeadConfig {
    Index latent_dim = 8;  // d_v
    Index cond_dim = 64;   // d_e (timestep embedding and backbone state width)
    Index width = 64;
    Index blocks = 3;
};

// Sinusoidal timestep embeddings, rows 0..T inclusive.
template <class S>
MatrixX<S> timestep_table(int timesteps, Index dim) {
    MatrixX<S> table(timesteps + 1, dim);
    for (int t = 0; t <= timesteps; ++t)
        for (Index k = 0; k < dim; ++k) {
            double freq = std::pow(10000.0, -double(k / 2 * 2) / double(dim));
            double angle = double(t) * freq;
            table(t, k) = S(k % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return table;
}

template <class S>
void init_diffusion_head_params(ParamStore<S>& store, const DiffusionHeadConfig& cfg, Rng& rng) {
    store.add_gaussian("diff_head.in.W", cfg.latent_dim, cfg.width, rng, 0.02);
    store.add("diff_head.in.b", MatrixX<S>::Zero(1, cfg.width));
    for (Index i = 0; i < cfg.blocks; ++i) {
        std::string p = "diff_head.blk" + std::to_string(i) + ".";
        // zero-initialised modulation: every block starts as the identity
        store.add(p + "mod.W", MatrixX<S>::Zero(cfg.cond_dim, 3 * cfg.width));
        store.add(p + "mod.b", MatrixX<S>::Zero(1, 3 * cfg.width));
        store.add_gaussian(p + "W1", cfg.width, cfg.width, rng, 0.02);
        store.add(p + "b1", MatrixX<S>::Zero(1, cfg.width));
        store.add_gaussian(p + "W2", cfg.width, cfg.width, rng, 0.02);
        store.add(p + "b2", MatrixX<S>::Zero(1, cfg.width));
    }
    // zero-initialised output: the untrained head predicts exactly zero noise
    store.add("diff_head.out.W", MatrixX<S>::Zero(cfg.width, cfg.latent_dim));
    store.add("diff_head.out.b", MatrixX<S>::Zero(1, cfg.latent_dim));
    store.add_gaussian("diff_head.null", 1, cfg.cond_dim, rng, 0.02);
}

// Residual MLP with adaptive layer-norm modulation: each block reads
// (shift, scale, gate) from the conditioning vector, normalises, modulates,
// applies linear-SiLU-linear and adds the gated result back.
template <class S>
NodeId build_diffusion_head(Graph<S>& g, NodeId x_t, NodeId cond, const DiffusionHeadConfig& cfg,
                            const ParamFn<S>& param) {
    Index w = cfg.width;
    NodeId ones = g.constant(MatrixX<S>::Ones(1, w), "dh.ones");
    NodeId zeros = g.constant(MatrixX<S>::Zero(1, w), "dh.zeros");
    NodeId h = g.add(g.matmul(x_t, param(g, "diff_head.in.W", cfg.latent_dim, w)),
                     param(g, "diff_head.in.b", 1, w), "dh.in");
    NodeId c = g.silu(cond, "dh.cond");
    for (Index i = 0; i < cfg.blocks; ++i) {
        std::string p = "diff_head.blk" + std::to_string(i) + ".";
        NodeId m = g.add(g.matmul(c, param(g, p + "mod.W", cfg.cond_dim, 3 * w)),
                         param(g, p + "mod.b", 1, 3 * w), p + "mod");
        NodeId shift = g.slice(m, 1, 0, w, p + "shift");
        NodeId scale_ = g.slice(m, 1, w, w, p + "scale");
        NodeId gate = g.slice(m, 1, 2 * w, w, p + "gate");
        NodeId norm = g.layer_norm(h, ones, zeros, S(1e-5), p + "norm");
        // norm * (1 + scale) + shift
        NodeId modded = g.add(g.add(g.mul(norm, scale_), norm), shift, p + "modulate");
        NodeId u = g.add(g.matmul(g.silu(g.add(g.matmul(modded, param(g, p + "W1", w, w)),
                                               param(g, p + "b1", 1, w))),
                                  param(g, p + "W2", w, w)),
                         param(g, p + "b2", 1, w), p + "mlp");
        h = g.add(h, g.mul(u, gate), p + "out");
    }
    NodeId norm = g.layer_norm(h, ones, zeros, S(1e-5), "dh.final.norm");
    return g.add(g.matmul(norm, param(g, "diff_head.out.W", w, cfg.latent_dim)),
                 param(g, "diff_head.out.b", 1, cfg.latent_dim), "dh.eps");
}

// Noise prediction for a batch of rows sharing one timestep. A null
// conditioning pointer selects the learned unconditional vector.
template <class S>
MatrixX<S> eps_predict(const ParamStore<S>& store, const DiffusionHeadConfig& cfg,
                       const MatrixX<S>& t_table, const MatrixX<S>& x_t, int t, const MatrixX<S>* f) {
    if (t < 0 || t >= t_table.rows()) fail("timestep ", t, " outside the embedding table");
    Graph<S> g;
    NodeId cond_part;
    if (f) {
        if (f->rows() != x_t.rows() || f->cols() != cfg.cond_dim)
            throw ShapeError("conditioning must be " + std::to_string(x_t.rows()) + "x" +
                             std::to_string(cfg.cond_dim));
        cond_part = g.constant(*f, "cond.f");
    } else {
        cond_part = g.matmul(g.constant(MatrixX<S>::Ones(x_t.rows(), 1)),
                             g.param("diff_head.null", 1, cfg.cond_dim, false), false, false, "cond.null");
    }
    MatrixX<S> t_rows(x_t.rows(), cfg.cond_dim);
    for (Index r = 0; r < x_t.rows(); ++r) t_rows.row(r) = t_table.row(t);
    NodeId cond = g.add(g.constant(t_rows, "cond.t"), cond_part, "cond");
    NodeId eps = build_diffusion_head(g, g.constant(x_t, "x_t"), cond, cfg, frozen_params<S>());
    g.forward({}, &store);
    return g.value(eps);
}

// Classifier-free guidance mix. Scales 0 and 1 return the inputs untouched so
// the "guidance off" cases are exact, not approximate.
template <class S>
MatrixX<S> cfg_combine(const MatrixX<S>& eps_cond, const MatrixX<S>& eps_uncond, double scale) {
    if (!same_dims(eps_cond, eps_uncond)) throw ShapeError("cfg_combine: shape mismatch");
    if (scale == 1.0) return eps_cond;
    if (scale == 0.0) return eps_uncond;
    return eps_uncond + S(scale) * (eps_cond - eps_uncond);
}

// Deterministic DDIM trajectory (eta = 0) from a given starting noise, over
// the schedule's sample steps, highest step first. The loop draws nothing.
template <class S>
MatrixX<S> ddim_denoise(const ParamStore<S>& store, const DiffusionHeadConfig& cfg,
                        const DiffusionSchedule& sched, const MatrixX<S>& t_table, const MatrixX<S>* f,
                        double cfg_scale, MatrixX<S> x) {
    const auto& steps = sched.sample_steps;
    for (size_t i = steps.size(); i-- > 0;) {
        int t = steps[i];
        int t_prev = i == 0 ? 0 : steps[i - 1];
        MatrixX<S> eps_u = eps_predict<S>(store, cfg, t_table, x, t, nullptr);
        MatrixX<S> eps;
        if (f) {
            MatrixX<S> eps_c = eps_predict<S>(store, cfg, t_table, x, t, f);
            eps = cfg_combine<S>(eps_c, eps_u, cfg_scale);
        } else {
            eps = eps_u;
        }
        double ab_t = sched.alpha_bar[size_t(t)];
        double ab_prev = sched.alpha_bar[size_t(t_prev)];
        MatrixX<S> x0 = (x - S(std::sqrt(1.0 - ab_t)) * eps) * S(1.0 / std::sqrt(ab_t));
        x = S(std::sqrt(ab_prev)) * x0 + S(std::sqrt(1.0 - ab_prev)) * eps;
        if (!x.allFinite())
            throw NumericError("non-finite sample at step " + std::to_string(t) + " of the sampler");
    }
    return x;
}

// Convenience wrapper drawing the starting noise from the given stream.
template <class S>
MatrixX<S> ddim_sample(const ParamStore<S>& store, const DiffusionHeadConfig& cfg,
                       const DiffusionSchedule& sched, const MatrixX<S>& t_table, const MatrixX<S>* f,
                       double cfg_scale, Rng& rng, Stream stream = Stream::SampleInit) {
    MatrixX<S> x(1, cfg.latent_dim);
    for (Index c = 0; c < cfg.latent_dim; ++c) x(0, c) = S(rng.gaussian(stream));
    return ddim_denoise(store, cfg, sched, t_table, f, cfg_scale, x);
}

// --- discrete-token head ------------------------------------------------

template <class S>
void init_lm_head_params(ParamStore<S>& store, Index dim, Index vocab_size) {
    // zero weights: the untrained head is exactly uniform over the vocabulary
    store.add("lm.W", MatrixX<S>::Zero(dim, vocab_size));
}

template <class S>
NodeId build_lm_logits(Graph<S>& g, NodeId states, Index dim, Index vocab_size, const ParamFn<S>& param) {
    return g.matmul(states, param(g, "lm.W", dim, vocab_size), false, false, "lm.logits");
}

// Greedy pick; ties break to the lowest token id.
template <class S>
int greedy_token(const MatrixX<S>& logits_row) {
    Index best = 0;
    for (Index j = 1; j < logits_row.cols(); ++j)
        if (logits_row(0, j) > logits_row(0, best)) best = j;
    return int(best);
}

// --- regression head (ablation) ------------------------------------------

template <class S>
void init_mse_head_params(ParamStore<S>& store, const DiffusionHeadConfig& cfg, Rng& rng) {
    store.add_gaussian("mse_head.W1", cfg.cond_dim, cfg.width, rng, 0.02);
    store.add("mse_head.b1", MatrixX<S>::Zero(1, cfg.width));
    store.add_gaussian("mse_head.W2", cfg.width, cfg.width, rng, 0.02);
    store.add("mse_head.b2", MatrixX<S>::Zero(1, cfg.width));
    store.add_gaussian("mse_head.W3", cfg.width, cfg.latent_dim, rng, 0.02);
    store.add("mse_head.b3", MatrixX<S>::Zero(1, cfg.latent_dim));
}

template <class S>
NodeId build_mse_head(Graph<S>& g, NodeId states, const DiffusionHeadConfig& cfg, const ParamFn<S>& param) {
    NodeId h1 = g.silu(g.add(g.matmul(states, param(g, "mse_head.W1", cfg.cond_dim, cfg.width)),
                             param(g, "mse_head.b1", 1, cfg.width)),
                       "mse.h1");
    NodeId h2 = g.silu(g.add(g.matmul(h1, param(g, "mse_head.W2", cfg.width, cfg.width)),
                             param(g, "mse_head.b2", 1, cfg.width)),
                       "mse.h2");
    return g.add(g.matmul(h2, param(g, "mse_head.W3", cfg.width, cfg.latent_dim)),
                 param(g, "mse_head.b3", 1, cfg.latent_dim), "mse.out");
}

template <class S>
MatrixX<S> mse_head_predict(const ParamStore<S>& store, const DiffusionHeadConfig& cfg,
                            const MatrixX<S>& states) {
    Graph<S> g;
    NodeId out = build_mse_head(g, g.constant(states), cfg, frozen_params<S>());
    g.forward({}, &store);
    return g.value(out);
}

}  // namespace orthus
