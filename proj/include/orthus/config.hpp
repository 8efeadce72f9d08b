#pragma once

#include "orthus/common.hpp"

#include <cstdint>
#include <string>

namespace orthus {

// Every tunable in one place. Values parse from "key = value" text; unknown
// keys are rejected so typos fail loudly instead of silently using defaults.
struct Config {
    // synthetic corpus
    int64_t synth_train_size = 6400;
    int64_t synth_heldout_size = 640;
    double synth_jitter_pos = 1.5;        // max |center offset| in pixels
    double synth_jitter_scale = 0.15;     // relative size perturbation
    double synth_jitter_intensity = 0.08; // additive intensity perturbation
    double synth_pixel_noise = 0.015;     // gaussian pixel noise stddev

    // patch autoencoder + vector quantizer
    int64_t ae_latent_dim = 8;       // d_v
    int64_t ae_codebook_size = 64;   // K
    double ae_commit_weight = 0.25;
    double ae_lr = 1e-3;
    int64_t ae_batch = 32;
    int64_t ae_steps = 3000;
    double ae_finetune_lr = 1e-3;
    int64_t ae_finetune_steps = 1500;

    // vision embedding
    double embed_tau = 1.0;  // softmax temperature over code distances

    // variant selection: embedding path 0=softmax 1=argmin 2=linear; head
    // 0=diffusion 1=mse; objective 0=unified 1=understanding-only 2=generation-only
    int64_t model_embed_kind = 0;
    int64_t model_head_kind = 0;
    int64_t train_objective = 0;

    // backbone
    int64_t model_layers = 2;
    int64_t model_dim = 64;       // d_e
    int64_t model_heads = 4;
    int64_t model_mlp_mult = 4;
    int64_t model_max_len = 64;
    double model_init_std = 0.02;
    double model_rope_base = 10000.0;

    // diffusion head + schedule
    int64_t diff_timesteps = 1000;
    double diff_beta_start = 1e-4;
    double diff_beta_end = 0.02;
    int64_t diff_sample_steps = 100;  // DDIM subsequence length
    int64_t diff_head_width = 64;
    int64_t diff_head_blocks = 3;
    double diff_cfg_scale = 5.0;
    double diff_cond_drop = 0.1;  // probability of null condition during training

    // training
    double train_lambda = 100.0;  // weight on the diffusion term
    double train_base_lr = 1e-3;
    int64_t train_base_batch = 8;
    int64_t train_base_steps = 2000;
    double train_post_lr = 3e-4;
    int64_t train_post_batch = 8;
    int64_t train_post_steps = 4000;
    double train_weight_decay = 0.0;
    double train_adam_beta1 = 0.9;
    double train_adam_beta2 = 0.99;
    double train_adam_eps = 1e-8;

    // ablation presets (kept short; identical across the variants of one run)
    int64_t abl_base_steps = 600;
    int64_t abl_post_steps = 800;

    // decoding
    int64_t decode_budget = 40;  // max emissions per generation

    uint64_t seed = 42;

    // Parse "key = value" lines over the current values; '#' starts a comment.
    void apply_text(const std::string& text);
    void apply_file(const std::string& path);

    // Deterministic dump (declaration order), suitable for re-parsing.
    std::string serialize() const;

    // Reference-scale preset (two-stage schedule from the original recipe);
    // far too slow for a desk run, provided for documentation and scaling up.
    void apply_reference_preset();

    void validate() const;
};

}  // namespace orthus
