// Command-line surface: corpus synthesis, the four training stages, sampling,
// evaluation, variant comparisons, and the gradient self-check.
//
// Conventions shared by every subcommand:
//   * --out names a working directory; artifacts inside it have fixed names,
//     so stages chain without repeating paths.
//   * configuration resolves in layers: built-in defaults (or the checkpoint's
//     embedded snapshot when a checkpoint is loaded), then --paper-defaults,
//     then --config, then --seed;
//   * exit 0 on success, 1 with a single "error: ..." line on stderr for
//     runtime failures, 2 plus usage text for bad commands or flags.

#include "CLI11.hpp"

#include "orthus/ablation.hpp"
#include "orthus/checkpoint.hpp"
#include "orthus/gradsuite.hpp"
#include "orthus/pgm.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace orthus;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string data;
    std::string heldout;
    int64_t steps = -1;
    uint64_t seed = 0;
    bool seed_set = false;
    bool paper_defaults = false;
    bool jsonl = false;
};

// Adds the options every subcommand understands; per-command options are
// added at the call sites.
void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "key = value configuration file");
    cmd->add_option("--out", o.out_dir, "working directory for artifacts")->capture_default_str();
    auto* seed = cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->parse_complete_callback([&o, seed] { o.seed_set = seed->count() > 0; });
    cmd->add_flag("--paper-defaults", o.paper_defaults,
                  "start from the reference-scale preset (slow; for documentation)");
}

// Layered configuration: optional base snapshot (from a checkpoint), then the
// reference preset, then the user's file, then the seed override.
Config resolve_config(const CommonOpts& o, const std::string& base_text = "") {
    Config cfg;
    if (!base_text.empty()) cfg.apply_text(base_text);
    if (o.paper_defaults) cfg.apply_reference_preset();
    if (!o.config_path.empty()) cfg.apply_file(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    cfg.validate();
    return cfg;
}

std::string in_dir(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open ", path, " for writing");
    f << text;
    if (!f) fail("short write to ", path);
}

// The metrics log is append-only; each stage contributes a tagged block.
void append_metrics(const std::string& dir, const std::string& tag, const std::string& text) {
    std::string path = in_dir(dir, "metrics.log");
    std::ofstream f(path, std::ios::app);
    if (!f) fail("cannot open ", path, " for appending");
    f << "# " << tag << "\n" << text;
}

std::string jsonl_number(double v) {
    if (std::isnan(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void append_metrics_jsonl(const std::string& dir, const std::string& tag,
                          const std::vector<StepRecord>& curve, int64_t first_step) {
    std::string path = in_dir(dir, "metrics.jsonl");
    std::ofstream f(path, std::ios::app);
    if (!f) fail("cannot open ", path, " for appending");
    char buf[224];
    for (size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf,
                      "{\"stage\":\"%s\",\"step\":%lld,\"token_loss\":%s,\"patch_loss\":%s,"
                      "\"total\":%s}\n",
                      tag.c_str(), static_cast<long long>(first_step + int64_t(i)),
                      jsonl_number(curve[i].token_loss).c_str(),
                      jsonl_number(curve[i].patch_loss).c_str(),
                      jsonl_number(curve[i].total).c_str());
        f << buf;
    }
}

std::vector<StepRecord> as_curve(const std::vector<double>& losses) {
    std::vector<StepRecord> curve(losses.size());
    for (size_t i = 0; i < losses.size(); ++i) curve[i].total = losses[i];
    return curve;
}

void report_stage(const std::string& tag, const std::vector<StepRecord>& curve, double wall,
                  const std::string& ckpt_path, const std::string& ckpt_id) {
    if (!curve.empty()) {
        size_t w = smoothing_window(curve.size());
        std::printf("%s: %zu steps, smoothed total %.6g -> %.6g, %.1fs\n", tag.c_str(), curve.size(),
                    smoothed_head(curve, w, &StepRecord::total),
                    smoothed_tail(curve, w, &StepRecord::total), wall);
    } else {
        std::printf("%s: 0 steps\n", tag.c_str());
    }
    if (!ckpt_path.empty()) std::printf("checkpoint %s (%s)\n", ckpt_path.c_str(), ckpt_id.c_str());
}

EmbedKind parse_embed_kind(const std::string& s) {
    if (s == "softmax") return EmbedKind::Softmax;
    if (s == "argmin") return EmbedKind::Argmin;
    if (s == "linear") return EmbedKind::Linear;
    throw ConfigError("unknown embedding kind \"" + s + "\" (softmax|argmin|linear)");
}

HeadKind parse_head_kind(const std::string& s) {
    if (s == "diffusion") return HeadKind::Diffusion;
    if (s == "mse") return HeadKind::Mse;
    throw ConfigError("unknown head kind \"" + s + "\" (diffusion|mse)");
}

Objective parse_objective(const std::string& s) {
    if (s == "unified") return Objective::Unified;
    if (s == "understanding-only") return Objective::UnderstandingOnly;
    if (s == "generation-only") return Objective::GenerationOnly;
    throw ConfigError("unknown objective \"" + s + "\" (unified|understanding-only|generation-only)");
}

// --- subcommand bodies ------------------------------------------------------

void cmd_synth_data(const CommonOpts& o) {
    Config cfg = resolve_config(o);
    Rng rng(cfg.seed);
    JitterConfig jit;
    jit.pos = cfg.synth_jitter_pos;
    jit.scale = cfg.synth_jitter_scale;
    jit.intensity = cfg.synth_jitter_intensity;
    jit.pixel_noise = cfg.synth_pixel_noise;

    Corpus train = make_corpus(rng, cfg.synth_train_size, jit);
    Corpus heldout = make_corpus(rng, cfg.synth_heldout_size, jit);

    ensure_dir(o.out_dir);
    std::string train_path = in_dir(o.out_dir, "train.ortsyn");
    std::string held_path = in_dir(o.out_dir, "heldout.ortsyn");
    write_corpus(train_path, train);
    write_corpus(held_path, heldout);

    std::vector<Image> preview;
    for (size_t i = 0; i < train.size() && i < 16; ++i) preview.push_back(train[i].image);
    if (!preview.empty()) write_pgm(in_dir(o.out_dir, "corpus_preview.pgm"), tile_images(preview));

    std::printf("wrote %s (%zu items) and %s (%zu items)\n", train_path.c_str(), train.size(),
                held_path.c_str(), heldout.size());
}

void cmd_train_vae(const CommonOpts& o) {
    Config cfg = resolve_config(o);
    std::string data = o.data.empty() ? in_dir(o.out_dir, "train.ortsyn") : o.data;
    Corpus corpus = read_corpus(data);

    AutoencoderConfig acfg;
    acfg.latent_dim = Index(cfg.ae_latent_dim);
    acfg.codebook = Index(cfg.ae_codebook_size);
    acfg.commit_weight = cfg.ae_commit_weight;
    acfg.lr = cfg.ae_lr;
    acfg.batch = Index(cfg.ae_batch);
    acfg.steps = o.steps >= 0 ? o.steps : cfg.ae_steps;

    Rng rng(cfg.seed);
    ParamStore<double> store;
    init_autoencoder_params(store, acfg, rng);
    auto t0 = std::chrono::steady_clock::now();
    VqReport rep = train_vq_autoencoder(store, corpus, acfg, rng);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ensure_dir(o.out_dir);
    std::string path = in_dir(o.out_dir, "ae.ckpt");
    save_checkpoint(path, cfg.serialize(), store, AdamWState<double>{}, rng);

    std::vector<StepRecord> curve = as_curve(rep.loss_curve);
    append_metrics(o.out_dir, "train-vae", detail::metrics_text(curve, 0));
    if (o.jsonl) append_metrics_jsonl(o.out_dir, "train-vae", curve, 0);

    int64_t used = 0;
    for (int64_t n : rep.code_usage) used += n > 0 ? 1 : 0;
    std::printf("final vq loss %.6g, codes used %lld/%lld\n", rep.final_loss,
                static_cast<long long>(used), static_cast<long long>(acfg.codebook));
    report_stage("train-vae", curve, wall, path, "");
}

void cmd_finetune_decoder(const CommonOpts& o) {
    std::string ck_path = o.checkpoint.empty() ? in_dir(o.out_dir, "ae.ckpt") : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);
    std::string data = o.data.empty() ? in_dir(o.out_dir, "train.ortsyn") : o.data;
    Corpus corpus = read_corpus(data);

    int64_t steps = o.steps >= 0 ? o.steps : cfg.ae_finetune_steps;
    auto t0 = std::chrono::steady_clock::now();
    FinetuneReport rep =
        finetune_decoder(ck.store, corpus, cfg.ae_finetune_lr, Index(cfg.ae_batch), steps, ck.rng);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ensure_dir(o.out_dir);
    std::string path = in_dir(o.out_dir, "ae_finetuned.ckpt");
    save_checkpoint(path, cfg.serialize(), ck.store, AdamWState<double>{}, ck.rng);

    std::vector<StepRecord> curve = as_curve(rep.loss_curve);
    append_metrics(o.out_dir, "finetune-decoder", detail::metrics_text(curve, 0));
    if (o.jsonl) append_metrics_jsonl(o.out_dir, "finetune-decoder", curve, 0);
    report_stage("finetune-decoder", curve, wall, path, "");
}

void cmd_train_base(const CommonOpts& o, bool resume, const std::string& embed,
                    const std::string& head) {
    std::string ck_path =
        o.checkpoint.empty() ? in_dir(o.out_dir, resume ? "base.ckpt" : "ae_finetuned.ckpt")
                             : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);
    std::string data = o.data.empty() ? in_dir(o.out_dir, "train.ortsyn") : o.data;
    Corpus corpus = read_corpus(data);

    OrthusModel<double> model;
    AdamWState<double> opt;
    if (resume) {
        // mid-stage checkpoint: the full parameter set, optimizer moments, and
        // RNG counters continue exactly where the interrupted run stopped
        model = model_from_store<double>(cfg, std::move(ck.store));
        opt = std::move(ck.opt);
    } else {
        EmbedKind ek = embed.empty() ? embed_kind_of(cfg) : parse_embed_kind(embed);
        HeadKind hk = head.empty() ? head_kind_of(cfg) : parse_head_kind(head);
        model = make_model<double>(cfg, ek, hk, ck.store, ck.rng);
    }

    int64_t first_step = opt.t;
    TrainReport rep = train_base(model, corpus, ck.rng, opt, o.steps);

    ensure_dir(o.out_dir);
    std::string path = in_dir(o.out_dir, "base.ckpt");
    save_checkpoint(path, model.cfg.serialize(), model.store, opt, ck.rng);

    append_metrics(o.out_dir, "train-base", rep.metrics_log);
    if (o.jsonl) append_metrics_jsonl(o.out_dir, "train-base", rep.curve, first_step);
    report_stage("train-base", rep.curve, rep.wall_seconds, path, rep.checkpoint_id);
}

void cmd_post_train(const CommonOpts& o, bool resume, const std::string& objective) {
    std::string ck_path =
        o.checkpoint.empty() ? in_dir(o.out_dir, resume ? "post.ckpt" : "base.ckpt") : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);
    Objective obj = objective.empty() ? objective_of(cfg) : parse_objective(objective);
    cfg.train_objective = int64_t(obj);  // the saved snapshot records what actually ran

    std::string data = o.data.empty() ? in_dir(o.out_dir, "train.ortsyn") : o.data;
    Corpus corpus = read_corpus(data);

    OrthusModel<double> model = model_from_store<double>(cfg, std::move(ck.store));
    AdamWState<double> opt;
    if (resume) opt = std::move(ck.opt);

    int64_t first_step = opt.t;
    TrainReport rep = post_train(model, corpus, ck.rng, opt, o.steps, obj);

    ensure_dir(o.out_dir);
    std::string path = in_dir(o.out_dir, "post.ckpt");
    save_checkpoint(path, model.cfg.serialize(), model.store, opt, ck.rng);

    append_metrics(o.out_dir, "post-train", rep.metrics_log);
    if (o.jsonl) append_metrics_jsonl(o.out_dir, "post-train", rep.curve, first_step);
    report_stage("post-train", rep.curve, rep.wall_seconds, path, rep.checkpoint_id);
}

void cmd_generate(const CommonOpts& o, const std::string& prompt, int samples) {
    if (samples < 1) fail("--samples must be at least 1");
    std::string ck_path = o.checkpoint.empty() ? in_dir(o.out_dir, "post.ckpt") : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);
    OrthusModel<double> model = model_from_store<double>(cfg, std::move(ck.store));

    std::vector<int> caption = vocab::tokenize(prompt);
    uint64_t seed = o.seed_set ? o.seed : cfg.seed;
    Rng rng(seed);
    ensure_dir(o.out_dir);

    for (int k = 0; k < samples; ++k) {
        GenerationResult<double> res = generate_from_caption(model, caption, rng);
        std::string stem = in_dir(o.out_dir, "gen_s" + std::to_string(seed) + "_" + std::to_string(k));

        write_text(stem + ".trace.tsv", trace_tsv(res.trace));

        std::vector<int> tokens;
        for (const TraceEntry& e : res.trace)
            if (!e.is_patch) tokens.push_back(e.value);
        write_text(stem + ".txt", vocab::detokenize(tokens) + "\n");

        // an undertrained model can emit a protocol-breaking sequence (say, a
        // stray image bracket in text); the trace still documents it, there is
        // just no image to decode
        std::vector<Image> images;
        std::string note;
        try {
            images = decode_image_segments(res.sequence, model.store);
        } catch (const Error& e) {
            note = e.what();
        }
        if (!images.empty()) write_pgm(stem + ".pgm", tile_images(images));
        if (note.empty())
            std::printf("sample %d: %zu image(s), %zu trace entries -> %s.*\n", k, images.size(),
                        res.trace.size(), stem.c_str());
        else
            std::printf("sample %d: no decodable image (%s), %zu trace entries -> %s.*\n", k,
                        note.c_str(), res.trace.size(), stem.c_str());
    }
}

void cmd_eval(const CommonOpts& o, int caption_limit) {
    std::string ck_path = o.checkpoint.empty() ? in_dir(o.out_dir, "post.ckpt") : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);
    OrthusModel<double> model = model_from_store<double>(cfg, std::move(ck.store));

    std::string held_path = o.heldout.empty() ? in_dir(o.out_dir, "heldout.ortsyn") : o.heldout;
    Corpus heldout = read_corpus(held_path);

    uint64_t eval_seed = o.seed_set ? o.seed : cfg.seed;
    ReconMetrics cont = eval_reconstruction(model.store, heldout, /*quantized=*/false);
    ReconMetrics quant = eval_reconstruction(model.store, heldout, /*quantized=*/true);
    EvalLosses losses = eval_losses(model, heldout, eval_seed);
    Rng cap_rng(eval_seed);
    double valid = caption_validity_rate(model, heldout, cap_rng, size_t(caption_limit));

    std::printf("recon_psnr_continuous: %s\n", detail::cell(cont.mean_psnr).c_str());
    std::printf("recon_ssim_continuous: %s\n", detail::cell(cont.mean_ssim).c_str());
    std::printf("recon_psnr_quantized: %s\n", detail::cell(quant.mean_psnr).c_str());
    std::printf("recon_ssim_quantized: %s\n", detail::cell(quant.mean_ssim).c_str());
    std::printf("token_loss: %s\n", detail::cell(losses.token_loss).c_str());
    std::printf("patch_loss: %s\n", detail::cell(losses.patch_loss).c_str());
    std::printf("combined_loss: %s\n", detail::cell(losses.combined).c_str());
    std::printf("caption_valid_rate: %s\n", detail::cell(valid).c_str());
}

void cmd_ablate(const CommonOpts& o, const std::string& kind_name) {
    AblationKind kind = ablation_kind_from(kind_name);
    std::string ck_path = o.checkpoint.empty() ? in_dir(o.out_dir, "ae_finetuned.ckpt") : o.checkpoint;
    LoadedCheckpoint<double> ck = load_checkpoint<double>(ck_path);
    Config cfg = resolve_config(o, ck.config_text);

    std::string data = o.data.empty() ? in_dir(o.out_dir, "train.ortsyn") : o.data;
    std::string held_path = o.heldout.empty() ? in_dir(o.out_dir, "heldout.ortsyn") : o.heldout;
    Corpus corpus = read_corpus(data);
    Corpus heldout = read_corpus(held_path);

    AblationReport rep = run_ablation<double>(kind, cfg, ck.store, corpus, heldout);

    ensure_dir(o.out_dir);
    std::string path = in_dir(o.out_dir, std::string("ablation_") + ablation_kind_name(kind) + ".txt");
    write_text(path, rep.table);
    std::fputs(rep.table.c_str(), stdout);
    std::printf("wrote %s\n", path.c_str());
    // an ordering failure is flagged in the table but still produces the
    // report; the command itself succeeded
}

void cmd_gradcheck(const CommonOpts& o, int shapes) {
    Config cfg = resolve_config(o);
    GradSuiteReport rep = run_grad_suite(shapes, cfg.seed);
    std::fputs(render_grad_table(rep).c_str(), stdout);
    if (!rep.all_below(1e-4))
        fail("gradient suite exceeded tolerance: worst relative error ", rep.worst);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified text+image transformer on a synthetic shapes corpus"};
    app.require_subcommand(1);

    CommonOpts synth_o, vae_o, ft_o, base_o, post_o, gen_o, eval_o, abl_o, grad_o;

    CLI::App* synth = app.add_subcommand("synth-data", "render the shapes corpus to disk");
    add_common(synth, synth_o);

    CLI::App* vae = app.add_subcommand("train-vae", "train the patch autoencoder + quantizer");
    add_common(vae, vae_o);
    vae->add_option("--data", vae_o.data, "training corpus (default <out>/train.ortsyn)");
    vae->add_option("--steps", vae_o.steps, "override the step count");
    vae->add_flag("--jsonl", vae_o.jsonl, "also append metrics as JSON lines");

    CLI::App* ft = app.add_subcommand("finetune-decoder",
                                      "adapt the decoder to continuous (unquantized) features");
    add_common(ft, ft_o);
    ft->add_option("--checkpoint", ft_o.checkpoint, "autoencoder checkpoint (default <out>/ae.ckpt)");
    ft->add_option("--data", ft_o.data, "training corpus (default <out>/train.ortsyn)");
    ft->add_option("--steps", ft_o.steps, "override the step count");
    ft->add_flag("--jsonl", ft_o.jsonl, "also append metrics as JSON lines");

    CLI::App* base = app.add_subcommand("train-base", "stage one: embeddings + generative head");
    add_common(base, base_o);
    base->add_option("--checkpoint", base_o.checkpoint,
                     "input checkpoint (default <out>/ae_finetuned.ckpt, or <out>/base.ckpt with "
                     "--resume)");
    base->add_option("--data", base_o.data, "training corpus (default <out>/train.ortsyn)");
    base->add_option("--steps", base_o.steps, "override the step count");
    base->add_flag("--jsonl", base_o.jsonl, "also append metrics as JSON lines");
    bool base_resume = false;
    base->add_flag("--resume", base_resume, "continue a mid-stage checkpoint (optimizer included)");
    std::string base_embed, base_head;
    base->add_option("--embed", base_embed, "embedding path: softmax|argmin|linear");
    base->add_option("--head", base_head, "generative head: diffusion|mse");

    CLI::App* post = app.add_subcommand("post-train", "stage two: joint tuning, mixed objective");
    add_common(post, post_o);
    post->add_option("--checkpoint", post_o.checkpoint,
                     "input checkpoint (default <out>/base.ckpt, or <out>/post.ckpt with --resume)");
    post->add_option("--data", post_o.data, "training corpus (default <out>/train.ortsyn)");
    post->add_option("--steps", post_o.steps, "override the step count");
    post->add_flag("--jsonl", post_o.jsonl, "also append metrics as JSON lines");
    bool post_resume = false;
    post->add_flag("--resume", post_resume, "continue a mid-stage checkpoint (optimizer included)");
    std::string post_objective;
    post->add_option("--objective", post_objective,
                     "unified|understanding-only|generation-only (default from config)");

    CLI::App* gen = app.add_subcommand("generate", "sample images from a caption prompt");
    add_common(gen, gen_o);
    gen->add_option("--checkpoint", gen_o.checkpoint, "model checkpoint (default <out>/post.ckpt)");
    std::string gen_prompt;
    gen->add_option("--prompt", gen_prompt, "caption text, e.g. \"a small bright circle at top-left\"")
        ->required();
    int gen_samples = 1;
    gen->add_option("--samples", gen_samples, "number of samples to draw")->capture_default_str();

    CLI::App* ev = app.add_subcommand("eval", "reconstruction, loss, and captioning metrics");
    add_common(ev, eval_o);
    ev->add_option("--checkpoint", eval_o.checkpoint, "model checkpoint (default <out>/post.ckpt)");
    ev->add_option("--held-out", eval_o.heldout, "held-out corpus (default <out>/heldout.ortsyn)");
    int eval_captions = 32;
    ev->add_option("--captions", eval_captions, "held-out images to caption")->capture_default_str();

    CLI::App* abl = app.add_subcommand("ablate", "train and compare variants side by side");
    add_common(abl, abl_o);
    abl->add_option("--checkpoint", abl_o.checkpoint,
                    "shared autoencoder checkpoint (default <out>/ae_finetuned.ckpt)");
    abl->add_option("--data", abl_o.data, "training corpus (default <out>/train.ortsyn)");
    abl->add_option("--held-out", abl_o.heldout, "held-out corpus (default <out>/heldout.ortsyn)");
    std::string abl_kind = "embedding";
    abl->add_option("--kind", abl_kind, "objective|embedding|head")->capture_default_str();

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of every kernel");
    add_common(grad, grad_o);
    int grad_shapes = 20;
    grad->add_option("--shapes", grad_shapes, "random shape draws per kernel")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) cmd_synth_data(synth_o);
        if (vae->parsed()) cmd_train_vae(vae_o);
        if (ft->parsed()) cmd_finetune_decoder(ft_o);
        if (base->parsed()) cmd_train_base(base_o, base_resume, base_embed, base_head);
        if (post->parsed()) cmd_post_train(post_o, post_resume, post_objective);
        if (gen->parsed()) cmd_generate(gen_o, gen_prompt, gen_samples);
        if (ev->parsed()) cmd_eval(eval_o, eval_captions);
        if (abl->parsed()) cmd_ablate(abl_o, abl_kind);
        if (grad->parsed()) cmd_gradcheck(grad_o, grad_shapes);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
